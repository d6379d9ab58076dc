use nalgebra::DMatrix;
use nlstab_core::model::{corpus_system, jacobian_fd, AutonomousField, Field, FnField, VectorFieldSpec, FD_STEP};
use nlstab_core::section::{build_section, SectionBranch, SectionOptions, SectionTable};
use nlstab_core::solve::SolveOptions;
use nlstab_core::synth::{
    check_exponential_condition, feedback_from_section, invert_map, synthesize_composition_symbol, synthesize_feedback,
    ClosedLoop, FeedbackTable, InvertError, SynthError,
};
use nlstab_core::verify::{classify_stability, ClassifyOptions, StabilityClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn example_target() -> AutonomousField {
    AutonomousField::parse(&["x1^2 + x2^2 + x2", "-2*x2 - x1/2"]).unwrap()
}

fn example_feedback(x: &[f64]) -> f64 {
    (-2.0 * x[1] - x[0] / 2.0 - x[0] * x[1] - x[1] * x[1]).cbrt()
}

/// `|f(x, u(x)) - G(x)|_inf` over the table, recomputed from the expressions.
fn closed_loop_defect(sys: &VectorFieldSpec, g: &AutonomousField, t: &FeedbackTable) -> f64 {
    t.entries()
        .map(|e| {
            let u = e.u.as_ref().unwrap();
            sys.components()
                .iter()
                .zip(g.components())
                .map(|(f, gi)| (f.eval(&e.x, u).unwrap() - gi.eval(&e.x, &[]).unwrap()).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn cubic_feedback_is_cube_root() {
    let sys = corpus_system("cubic_scalar").unwrap();
    let g = AutonomousField::negative_identity(1);
    let t = synthesize_feedback(&sys, &g, 0.5, 41, &SolveOptions::default()).unwrap();
    assert_eq!(t.len(), 41);
    assert_eq!(t.entry_at(&[0]).u.as_deref(), Some(&[0.0][..]));
    let err = t
        .entries()
        .map(|e| (e.u.as_ref().unwrap()[0] - (-2.0 * e.x[0]).cbrt()).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-6, "{err}");
    assert!(t.max_residual() <= 1e-8);
    assert!(closed_loop_defect(&sys, &g, &t) <= 1e-8);
}

#[test]
fn example_feedback_matches_closed_form() {
    let sys = corpus_system("example_2d").unwrap();
    let g = example_target();
    let t = synthesize_feedback(&sys, &g, 0.2, 15, &SolveOptions::default()).unwrap();
    assert_eq!(t.len(), 225);
    for e in t.entries() {
        assert!(
            (e.u.as_ref().unwrap()[0] - example_feedback(&e.x)).abs() <= 1e-6,
            "{:?}",
            e
        );
    }
    assert_eq!(t.entry_at(&[0, 0]).u.as_deref(), Some(&[0.0][..]));
    assert!(closed_loop_defect(&sys, &g, &t) <= 1e-8);
    // the closed loop is exponentially stable by the inverse-Jacobian test
    let jg = jacobian_fd(|x| g.eval(x), &[0.0, 0.0], FD_STEP).unwrap();
    assert!(check_exponential_condition(&jg.try_inverse().unwrap()).unwrap());
}

#[test]
fn state_only_admits_no_feedback() {
    let sys = corpus_system("state_only").unwrap();
    let g = AutonomousField::negative_identity(1);
    let err = synthesize_feedback(&sys, &g, 0.5, 21, &SolveOptions::default()).unwrap_err();
    let SynthError::NotSynthesizable(t) = err else {
        panic!("expected NotSynthesizable")
    };
    assert_eq!(t.unsolved().len(), 20);
    assert!(t.unsolved().iter().all(|x| x[0] != 0.0));
    assert_eq!(t.entry_at(&[0]).u.as_deref(), Some(&[0.0][..]));
}

#[test]
fn integrator_feedback_only_on_the_plane() {
    let sys = corpus_system("brockett_integrator").unwrap();
    let g = AutonomousField::negative_identity(3);
    let err = synthesize_feedback(&sys, &g, 0.5, 9, &SolveOptions::default()).unwrap_err();
    let SynthError::NotSynthesizable(t) = err else {
        panic!("expected NotSynthesizable")
    };
    // u = -(x1, x2) is forced, leaving x1 u2 - x2 u1 = 0 = -x3
    for e in t.entries() {
        assert_eq!(e.u.is_some(), e.x[2] == 0.0, "{:?}", e);
    }
}

#[test]
fn composition_symbols_close_the_feedback_gap() {
    let opts = SolveOptions::default().with_bound(Some(5.0));
    let sys = corpus_system("state_only").unwrap();
    let g = AutonomousField::negative_identity(1);
    let t = synthesize_composition_symbol(&sys, &g, 0.5, 21, &opts).unwrap();
    assert!(t.max_residual() <= 1e-8);
    for e in t.entries() {
        assert!((e.h.as_ref().unwrap()[0] + e.x[0]).abs() <= 1e-10);
    }
    assert_eq!(t.entry_at(&[0]).h.as_deref(), Some(&[0.0, 0.0][..]));

    let cubic = corpus_system("cubic_scalar").unwrap();
    let t = synthesize_composition_symbol(&cubic, &g, 0.5, 21, &opts).unwrap();
    for e in t.entries() {
        let h = e.h.as_ref().unwrap();
        assert!((h[0] + h[1].powi(3) + e.x[0]).abs() <= 1e-8);
    }
}

#[test]
fn integrator_symbol_fails_where_third_component_dominates() {
    let sys = corpus_system("brockett_integrator").unwrap();
    let g = AutonomousField::negative_identity(3);
    let opts = SolveOptions::default().with_bound(Some(5.0));
    let err = synthesize_composition_symbol(&sys, &g, 0.5, 9, &opts).unwrap_err();
    let SynthError::SymbolNotSynthesizable(t) = err else {
        panic!("expected SymbolNotSynthesizable")
    };
    assert!(!t.unsolved().is_empty());
    for x in t.unsolved() {
        assert!(x[2].abs() > x[0].abs().max(x[1].abs()), "{x:?}");
    }
}

#[test]
fn invert_map_examples() {
    let half = FnField::new(1, |y: &[f64]| Ok(vec![-y[0] / 2.0]));
    assert!((invert_map(&half, &[1.0], 1e-12, None).unwrap()[0] + 2.0).abs() <= 1e-12);
    let id = FnField::new(3, |y: &[f64]| Ok(y.to_vec()));
    assert_eq!(
        invert_map(&id, &[0.1, -0.2, 0.3], 1e-12, None).unwrap(),
        vec![0.1, -0.2, 0.3]
    );
    let flat = FnField::new(1, |y: &[f64]| Ok(vec![y[0].powi(5)]));
    assert!(matches!(
        invert_map(&flat, &[0.1], 1e-12, None),
        Err(InvertError::SingularAtOrigin(_))
    ));
}

/// Discriminant of the quadratic in `y1` obtained from `G(y) = x` after
/// eliminating `y2 = -x2/2 - y1/4`; negative means `x` has no real preimage.
fn preimage_discriminant(x: &[f64]) -> f64 {
    let (a, b, c) = (17.0 / 16.0, (x[1] - 1.0) / 4.0, x[1] * x[1] / 4.0 - x[1] / 2.0 - x[0]);
    b * b - 4.0 * a * c
}

#[test]
fn invert_map_round_trips_example_target() {
    let g = example_target();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let (mut inverted, mut outside) = (0, 0);
    while inverted < 50 {
        let x: Vec<f64> = loop {
            let p: Vec<f64> = (0..2).map(|_| rng.random_range(-0.1..0.1)).collect();
            if p.iter().map(|c| c * c).sum::<f64>() <= 0.01 {
                break p;
            }
        };
        let disc = preimage_discriminant(&x);
        if disc < 0.0 {
            assert!(matches!(
                invert_map(&g, &x, 1e-12, None),
                Err(InvertError::NoConvergence { .. })
            ));
            outside += 1;
            continue;
        }
        if disc < 1e-3 {
            // near the fold
            continue;
        }
        let y = invert_map(&g, &x, 1e-12, None).unwrap();
        let back = [y[0] * y[0] + y[1] * y[1] + y[1], -2.0 * y[1] - y[0] / 2.0];
        assert!(
            (back[0] - x[0]).abs() <= 1e-8 && (back[1] - x[1]).abs() <= 1e-8,
            "{x:?}"
        );
        inverted += 1;
    }
    assert!(outside > 0);
}

fn anchored_section(sys: &VectorFieldSpec, g: AutonomousField, radius: f64, grid: usize) -> SectionTable {
    let opts = SectionOptions {
        branch: SectionBranch::StateInverseOf(g),
        // the control part grows like the cube root of the target
        domain: None,
        ..SectionOptions::for_radius(radius)
    };
    build_section(sys, radius, grid, &opts).unwrap()
}

#[test]
fn cubic_feedback_from_sections() {
    let sys = corpus_system("cubic_scalar").unwrap();
    let opts = SolveOptions::default();
    // alpha_1(y) = -y: closed loop -x, u = cbrt(-2x)
    let section = anchored_section(&sys, AutonomousField::negative_identity(1), 0.5, 41);
    let from_section = feedback_from_section(&sys, &section, 0.5, 21, &opts).unwrap();
    let direct = synthesize_feedback(&sys, &AutonomousField::negative_identity(1), 0.5, 21, &opts).unwrap();
    for (a, b) in from_section.entries().zip(direct.entries()) {
        assert_eq!(a.x, b.x);
        assert!((a.u.as_ref().unwrap()[0] - b.u.as_ref().unwrap()[0]).abs() <= 1e-5);
        assert!((a.u.as_ref().unwrap()[0] - (-2.0 * a.x[0]).cbrt()).abs() <= 1e-6);
    }
    // alpha_1(y) = -y/2: closed loop -2x, u^3 = -3x
    let section = anchored_section(&sys, AutonomousField::parse(&["-2*x1"]).unwrap(), 0.5, 41);
    let t = feedback_from_section(&sys, &section, 0.2, 21, &opts).unwrap();
    for e in t.entries() {
        assert!((e.u.as_ref().unwrap()[0] - (-3.0 * e.x[0]).cbrt()).abs() <= 1e-6);
        assert!((e.preimage.as_ref().unwrap()[0] + 2.0 * e.x[0]).abs() <= 1e-8);
    }
    // the default minimum-norm branch gives some stabilizing feedback as well
    let section = build_section(&sys, 0.5, 41, &SectionOptions::for_radius(0.5)).unwrap();
    let alpha1 = FnField::new(1, |y: &[f64]| Ok(vec![section.evaluate(&sys, y)?[0]]));
    let j = jacobian_fd(|y| alpha1.eval(y), &[0.0], FD_STEP).unwrap();
    let t = feedback_from_section(&sys, &section, 0.2, 11, &opts).unwrap();
    assert!(t.max_residual() <= 1e-8);
    assert_eq!(check_exponential_condition(&j).unwrap(), j[(0, 0)] < 0.0);
}

#[test]
fn example_feedback_from_section_agrees() {
    let sys = corpus_system("example_2d").unwrap();
    let g = example_target();
    let opts = SolveOptions::default();
    // G is not onto a neighborhood of every size: targets with x1 < -1/68 have no preimage
    let section = anchored_section(&sys, g.clone(), 0.005, 7);
    assert!(section.entries().all(|e| preimage_discriminant(&e.y) > 0.0));
    let alpha1 = FnField::new(2, |y: &[f64]| Ok(section.evaluate(&sys, y)?[..2].to_vec()));
    let j = jacobian_fd(|y| alpha1.eval(y), &[0.0, 0.0], FD_STEP).unwrap();
    let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -2.0])
        .try_inverse()
        .unwrap();
    assert!((&j - expected).abs().max() < 1e-6);
    assert!(check_exponential_condition(&j).unwrap());

    let from_section = feedback_from_section(&sys, &section, 0.001, 5, &opts).unwrap();
    let direct = synthesize_feedback(&sys, &g, 0.001, 5, &opts).unwrap();
    for (a, b) in from_section.entries().zip(direct.entries()) {
        assert!((a.u.as_ref().unwrap()[0] - b.u.as_ref().unwrap()[0]).abs() <= 1e-5);
        assert!((a.u.as_ref().unwrap()[0] - example_feedback(&a.x)).abs() <= 1e-6);
    }
    assert!(closed_loop_defect(&sys, &g, &from_section) <= 1e-8);
}

#[test]
fn identity_section_gives_unstable_closed_loop() {
    let sys = corpus_system("state_only").unwrap();
    let section = build_section(&sys, 0.5, 11, &SectionOptions::for_radius(0.5)).unwrap();
    let t = feedback_from_section(&sys, &section, 0.5, 11, &SolveOptions::default()).unwrap();
    let cl = ClosedLoop::new(&sys, &t);
    let r = classify_stability(&cl, &ClassifyOptions::new(0.1, 4, 20.0, 1)).unwrap();
    assert_eq!(r.classification, StabilityClass::Diverged);
}

#[test]
fn singular_section_is_rejected() {
    // f = u1: the minimum-norm section never moves x, so alpha_1 = 0
    let sys = VectorFieldSpec::parse("pure_control", 1, 1, &["u1"]).unwrap();
    let section = build_section(&sys, 0.5, 11, &SectionOptions::for_radius(0.5)).unwrap();
    assert!(section.entries().all(|e| e.w.as_ref().unwrap()[0].abs() <= 1e-15));
    let err = feedback_from_section(&sys, &section, 0.5, 11, &SolveOptions::default()).unwrap_err();
    assert!(
        matches!(err, SynthError::Invert(InvertError::SingularAtOrigin(_))),
        "{err:?}"
    );
}

#[test]
fn synthesis_is_deterministic() {
    let sys = corpus_system("example_2d").unwrap();
    let g = example_target();
    let opts = SolveOptions::default();
    assert_eq!(
        synthesize_feedback(&sys, &g, 0.2, 9, &opts),
        synthesize_feedback(&sys, &g, 0.2, 9, &opts)
    );
}
