#![allow(dead_code)]

use fragwave::dislocation::{DislocationMeasure, FragmentVector};
use proptest::prelude::*;

/// Fragment vector with 2 to 4 pieces and total mass in [0.4, 1].
pub fn fragments() -> impl Strategy<Value = FragmentVector> {
    (prop::collection::vec(0.05f64..1.0, 2..=4), 0.4f64..=1.0).prop_map(|(raw, mass)| {
        let total: f64 = raw.iter().sum();
        let mut sizes: Vec<f64> = raw.iter().map(|u| u / total * mass).collect();
        sizes.sort_by(|a, b| b.total_cmp(a));
        FragmentVector::new(sizes).expect("valid fragments")
    })
}

/// Finite dislocation measure with 1 to 3 atoms.
pub fn measure() -> impl Strategy<Value = DislocationMeasure> {
    prop::collection::vec((0.1f64..5.0, fragments()), 1..=3)
        .prop_filter_map("measure must validate", |atoms| {
            DislocationMeasure::new(atoms).ok()
        })
}

pub fn binary() -> DislocationMeasure {
    DislocationMeasure::single(1.0, &[0.5, 0.5]).unwrap()
}

pub fn lossy() -> DislocationMeasure {
    DislocationMeasure::single(1.0, &[0.5, 0.25]).unwrap()
}
