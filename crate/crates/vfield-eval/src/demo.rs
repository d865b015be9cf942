//! Bundled demo systems: the two benchmark oscillators, a frictionless
//! pendulum, and a chaotic convection system.

use vfield_core::VectorField;

type FieldFn = fn(&[f64], &mut [f64]);

pub struct DemoSystem {
    pub name: &'static str,
    pub dimension: usize,
    pub chaotic: bool,
    pub default_x0: Vec<f64>,
    pub window: (f64, f64),
    field: FieldFn,
}

impl VectorField for DemoSystem {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.field)(x, out)
    }
}

fn vdp(x: &[f64], out: &mut [f64]) {
    out[0] = x[1];
    out[1] = -x[0] + 0.5 * x[1] * (1.0 - x[0] * x[0]);
}

fn fhn(x: &[f64], out: &mut [f64]) {
    out[0] = 3.0 * (x[0] - x[0].powi(3) / 3.0 + x[1]);
    out[1] = (0.2 - 3.0 * x[0] - 0.2 * x[1]) / 3.0;
}

fn pendulum(x: &[f64], out: &mut [f64]) {
    out[0] = x[1];
    out[1] = -x[0].sin();
}

fn lorenz(x: &[f64], out: &mut [f64]) {
    out[0] = 10.0 * (x[1] - x[0]);
    out[1] = x[0] * (28.0 - x[2]) - x[1];
    out[2] = x[0] * x[1] - 8.0 / 3.0 * x[2];
}

pub fn van_der_pol() -> DemoSystem {
    DemoSystem {
        name: "van-der-pol",
        dimension: 2,
        chaotic: false,
        default_x0: vec![-1.5, 2.5],
        window: (0.0, 14.0),
        field: vdp,
    }
}

pub fn fitzhugh_nagumo() -> DemoSystem {
    DemoSystem {
        name: "fitzhugh-nagumo",
        dimension: 2,
        chaotic: false,
        default_x0: vec![-1.0, 1.0],
        window: (0.0, 5.0),
        field: fhn,
    }
}

pub fn frictionless_pendulum() -> DemoSystem {
    DemoSystem {
        name: "pendulum",
        dimension: 2,
        chaotic: false,
        default_x0: vec![1.2, 0.0],
        window: (0.0, 10.0),
        field: pendulum,
    }
}

pub fn convection_attractor() -> DemoSystem {
    DemoSystem {
        name: "convection-attractor",
        dimension: 3,
        chaotic: true,
        default_x0: vec![1.0, 1.0, 1.0],
        window: (0.0, 2.0),
        field: lorenz,
    }
}

pub fn demo_systems() -> Vec<DemoSystem> {
    vec![
        van_der_pol(),
        fitzhugh_nagumo(),
        frictionless_pendulum(),
        convection_attractor(),
    ]
}

pub fn demo_by_name(name: &str) -> Option<DemoSystem> {
    demo_systems().into_iter().find(|s| s.name == name)
}
