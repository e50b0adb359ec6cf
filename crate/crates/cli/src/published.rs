//! Published regulator solutions and gains for the built-in eight-agent
//! example, used by `reproduce-paper` to report deltas.

use poscon::numerics::{mat_from_rows, Mat};

pub struct PublishedAgent {
    pub x: Mat,
    pub u: Mat,
    pub k1: Mat,
    pub k2: Mat,
    pub k3: Mat,
}

fn class_a() -> PublishedAgent {
    PublishedAgent {
        x: mat_from_rows(&[&[0.5960, 0.5960], &[0.1980, 0.1980], &[1.0, 1.0]]),
        u: mat_from_rows(&[&[0.2160, 0.2160]]),
        k1: mat_from_rows(&[&[0.0, 0.0, -1.0]]),
        k2: mat_from_rows(&[&[1.2160, 1.2160]]),
        k3: mat_from_rows(&[&[0.0], &[0.0], &[1.0]]),
    }
}

fn class_b() -> PublishedAgent {
    PublishedAgent {
        x: mat_from_rows(&[&[0.4975, 0.4975], &[1.0, 1.0]]),
        u: mat_from_rows(&[&[0.0100, 0.0100]]),
        k1: mat_from_rows(&[&[0.0, -1.0]]),
        k2: mat_from_rows(&[&[1.0100, 1.0100]]),
        k3: mat_from_rows(&[&[0.0], &[1.0]]),
    }
}

fn class_c() -> PublishedAgent {
    PublishedAgent {
        x: mat_from_rows(&[&[0.5000, 0.5000], &[0.1661, 0.1661]]),
        u: mat_from_rows(&[&[0.0050, 0.0050]]),
        k1: mat_from_rows(&[&[-1.0, 0.0]]),
        k2: mat_from_rows(&[&[0.5050, 0.5050]]),
        k3: mat_from_rows(&[&[1.0], &[0.0]]),
    }
}

/// Values for agents 1..8 in order.
pub fn agents() -> Vec<PublishedAgent> {
    vec![class_a(), class_a(), class_b(), class_b(), class_c(), class_c(), class_a(), class_c()]
}

/// Rounding of the published figures.
pub const PRECISION: f64 = 1e-3;
