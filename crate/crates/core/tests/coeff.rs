use homocell::coeff::{parse_expr, validate, CoefficientField, Env, ExprError, Tensor};
use proptest::prelude::*;

const TRIG: &str = "2 + sin(2*pi*y1)*sin(2*pi*y2)";

#[test]
fn parser_examples() {
    let e = parse_expr(TRIG).unwrap();
    assert_eq!(e.eval(&Env::default()), 2.0);
    let lam = CoefficientField::isotropic_str("2 + cos(2*pi*y1)").unwrap();
    assert!((lam.eval_tensor([0.5, 0.3]).unwrap().get(0, 0, 0, 0) - 1.0).abs() <= 1e-15);
    let err = parse_expr("sin(2*pi*y1").unwrap_err();
    assert!(err.to_string().contains("unbalanced parenthesis"), "{err}");
    assert!(matches!(parse_expr("2 $ 3"), Err(ExprError::BadCharacter { pos: 2, .. })));
}

#[test]
fn laminate_quarter_period_and_shift() {
    let lam = CoefficientField::isotropic_str("2 + cos(2*pi*y1)").unwrap();
    let a = lam.eval_tensor([0.25, 0.9]).unwrap();
    assert!((a.get(0, 0, 0, 0) - 2.0).abs() <= 1e-15 && a.get(0, 1, 0, 0) == 0.0);
    assert_eq!(lam.eval_tensor([1.25, 0.9]).unwrap(), a);
}

#[test]
fn constant_field_and_validation_reports() {
    let two = CoefficientField::constant(&Tensor::scaled_identity(1, 2.0));
    for y in [[0.0, 0.0], [0.3, 17.2], [-4.1, 0.5]] {
        assert_eq!(two.eval_tensor(y).unwrap(), Tensor::scaled_identity(1, 2.0));
    }
    let r = validate(&CoefficientField::isotropic_str(TRIG).unwrap(), 64).unwrap();
    assert!(r.mu_low >= 1.0 - 1e-9 && r.mu_high <= 3.0 + 1e-9, "{r:?}");
    assert!(r.symmetric);
}

#[test]
fn asymmetric_scalar_entry_is_rejected() {
    let f = CoefficientField::from_toml_str("m = 1\nsymmetric = true\na.1.1.1.1 = \"2\"\na.2.2.1.1 = \"2\"\na.1.2.1.1 = \"1\"\n");
    assert!(f.and_then(|f| validate(&f, 16)).is_err());
}

#[test]
fn system_file_round_trip() {
    let src = "m = 2\n\
               a.1.1.1.1 = \"3 + cos(2*pi*y1)\"\n\
               a.2.2.1.1 = \"3\"\n\
               a.1.1.2.2 = \"2\"\n\
               a.2.2.2.2 = \"2 + 0.5*sin(2*pi*y2)\"\n\
               a.1.2.1.2 = \"0.25\"\n\
               a.2.1.2.1 = \"0.25\"\n";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sys.toml");
    std::fs::write(&path, src).unwrap();
    let f = CoefficientField::from_file(&path).unwrap();
    assert_eq!(f.m(), 2);
    let again = CoefficientField::from_toml_str(&f.to_toml_string()).unwrap();
    assert_eq!(again.content_hash(), f.content_hash());
    let r = validate(&f, 32).unwrap();
    assert!(r.mu_low > 0.0 && r.symmetric);
}

proptest! {
    #[test]
    fn evaluation_is_exactly_periodic(y1 in -3.0f64..3.0, y2 in -3.0f64..3.0, z1 in -5i32..5, z2 in -5i32..5) {
        let f = CoefficientField::isotropic_str(TRIG).unwrap();
        let a = f.eval_tensor([y1, y2]).unwrap();
        let b = f.eval_tensor([y1 + z1 as f64, y2 + z2 as f64]).unwrap();
        // Fractional parts of y and y + z agree up to the rounding of the shift.
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }
}
