use hopflax_core::duality::Grid;
use hopflax_core::field::{evaluate_classical_v, evaluate_u, EvaluationConfig};
use hopflax_core::geometry::{estimate_k, HyperplaneSection};
use hopflax_core::{FractionalOrder, GridFunction, LagrangianPair, QuotientModel};

#[test]
fn identity_quotient_matches_classical_baseline_path_by_path() {
    let model = QuotientModel::identity_interval(0.0, 4.0, 21).unwrap();
    let pair = LagrangianPair::quadratic(4.0, 41, 1.0).unwrap();
    let cfg = EvaluationConfig::new(4000, 3, EvaluationConfig::uniform_times(1.0, 5));
    let beta = FractionalOrder::new(0.6).unwrap();
    let u = evaluate_u(&model, &pair, beta, &cfg).unwrap();
    let g = GridFunction::from_fn(Grid::uniform(0.0, 4.0, 21).unwrap(), |x| x[0]).unwrap();
    let v = evaluate_classical_v(&g, &pair, beta, &cfg).unwrap();
    for (a, b) in u.u.iter().zip(&v.u) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn hyperplane_field_respects_bounds_and_constants() {
    let section = HyperplaneSection::Paired {
        sine: 0.5,
        linear: 0.25,
    };
    let model = QuotientModel::hyperplane(4, (0.0, 6.0), 25, section).unwrap();
    // Fiber distance is |y1 - y2| / 2 for hyperplanes in R^4.
    assert!((estimate_k(&model).unwrap() - 3.0).abs() < 1e-12);
    let pair = LagrangianPair::quadratic(3.0, 25, 3.0 * std::f64::consts::SQRT_2).unwrap();
    let cfg = EvaluationConfig::new(3000, 5, EvaluationConfig::uniform_times(0.5, 4));
    let field = evaluate_u(&model, &pair, FractionalOrder::new(0.5).unwrap(), &cfg).unwrap();
    for r in 0..field.rows.len() {
        let (v, _) = field.series_with_origin(r);
        // L >= 0 and L(0) = 0 give min over z <= value at z = x, so u <= g.
        assert!(v.iter().all(|&x| x <= field.g[r] + 1e-12));
    }
    assert_eq!(field.path_monotonicity_violations, 0);
}
