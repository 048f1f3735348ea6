//! Randomized invariants across modules.

use nalgebra::DVector;
use proptest::prelude::*;

use crate::crystal::{graph_radius, lattice_patch};
use crate::fit::fit_isometry;
use crate::lie::{exp_so, log_so, so_coords, so_from_coords};
use crate::rigidity::{assemble_hessian, e1, e2};
use crate::{Configuration, Crystal, Domain, PotentialSpec};

fn hex19() -> Crystal {
    lattice_patch(
        2,
        &PotentialSpec::default(),
        &Domain::Ball {
            center: vec![0.0, 0.0],
            radius: 2.01,
        },
        1.0,
    )
    .unwrap()
}

fn field(c: &Crystal, v: &[f64]) -> Configuration {
    Configuration::from_flat(c.dim(), v[..c.dim() * c.len()].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn so3_log_inverts_exp(coords in prop::collection::vec(-1.5f64..1.5, 3)) {
        let x = so_from_coords(3, &coords);
        let back = so_coords(&log_so(&exp_so(&x)).unwrap());
        for (a, b) in coords.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn exp_lands_in_so_d(coords in prop::collection::vec(-3.0f64..3.0, 6), d in 2usize..=4) {
        let m = d * (d - 1) / 2;
        let r = exp_so(&so_from_coords(d, &coords[..m]));
        let err = (r.transpose() * &r - nalgebra::DMatrix::identity(d, d)).amax();
        prop_assert!(err < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn e2_is_norm_of_hessian_action(v in prop::collection::vec(-1.0f64..1.0, 38)) {
        let c = hex19();
        let chk = PotentialSpec::default().chk();
        let h = field(&c, &v);
        let a = assemble_hessian(&c, chk);
        let lhs = e2(&c, chk, &h).unwrap();
        let rhs = (&a * h.to_dvector()).norm_squared();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
        let quad = h.to_dvector().dot(&(&a * h.to_dvector()));
        prop_assert!((e1(&c, chk, &h).unwrap() - quad).abs() <= 1e-10 * quad.max(1.0));
    }

    #[test]
    fn fit_recovers_exact_isometries(angle in -3.1f64..3.1, tx in -10.0f64..10.0, ty in -10.0f64..10.0) {
        let c = hex19();
        let theta = exp_so(&so_from_coords(2, &[angle]));
        let eta = DVector::from_vec(vec![tx, ty]);
        let dec = fit_isometry(&c.positions().transformed(&theta, &eta), &c).unwrap();
        prop_assert!((&dec.theta - &theta).amax() < 1e-12);
        prop_assert!((&dec.eta - &eta).amax() < 1e-12);
        prop_assert!(dec.h_inf < 1e-12);
    }

    #[test]
    fn fluctuation_bounded_by_edge_differences(
        v in prop::collection::vec(-0.1f64..0.1, 38),
        angle in -3.1f64..3.1,
    ) {
        let c = hex19();
        let theta = exp_so(&so_from_coords(2, &[angle]));
        let x = c.positions().transformed(&theta, &DVector::zeros(2)).axpy(1.0, &field(&c, &v));
        let dec = fit_isometry(&x, &c).unwrap();
        let r = graph_radius(&c) as f64;
        prop_assert!(dec.h_inf <= r * dec.gradh_inf * (1.0 + 1e-12));
        // The fluctuation has zero mean.
        prop_assert!(dec.h.centroid().amax() < 1e-13);
    }
}
