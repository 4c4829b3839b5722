use isores_core::averaging::{average_first, average_second};
use isores_core::presets::{preset, set_param, Base};
use isores_core::sysdef::SpecFile;
use isores_core::trigpoly::{Kind, TrigPoly};

fn with(base: Base, name: &str, sets: &[(&str, f64)]) -> SpecFile {
    let mut spec = preset(name).unwrap().spec;
    for &(k, v) in sets {
        set_param(base, &mut spec, k, v).unwrap();
    }
    spec
}

#[test]
fn ex0_depends_on_b1_minus_a1_only() {
    let a = with(Base::Ex0, "ex0", &[("A1", 0.0), ("B1", 1.2)]);
    let b = with(Base::Ex0, "ex0", &[("A1", 0.7), ("B1", 1.9)]);
    let ra = average_first(&a.build().unwrap(), 2).unwrap();
    let rb = average_first(&b.build().unwrap(), 2).unwrap();
    assert!(ra.lambda[2].max_coeff_diff(&rb.lambda[2]).unwrap() < 1e-13);
    assert!(ra.omega[2].max_coeff_diff(&rb.omega[2]).unwrap() < 1e-13);
}

#[test]
fn ex0_drift_second_average() {
    let (b0, c0, eps, s1) = (1.0, -0.5, 0.5, 8.0);
    let spec = with(
        Base::Ex0,
        "ex0",
        &[("B0", b0), ("C0", c0), ("eps", eps), ("s1", s1), ("B1", 1.0)],
    );
    let avg = average_first(&spec.build().unwrap(), 2).unwrap();
    let q = avg.find_q().unwrap();
    assert_eq!(q.q, 1);
    assert!(q.constant);
    assert!((q.value.unwrap() + s1 / 2.0).abs() < 1e-14);
    let sec = average_second(&avg).unwrap();
    let d = sec.f[2].denom();
    // ⟨(r/64)(32B₀ + 24C₀r² + …)⟩_ψ
    let want = TrigPoly::term((32.0 * b0 + 6.0 * eps * eps) / 64.0, 1, Kind::Const, 0, 0, d)
        .add(&TrigPoly::term(24.0 * c0 / 64.0, 3, Kind::Const, 0, 0, d))
        .unwrap();
    assert!(sec.f[2].max_coeff_diff(&want).unwrap() < 1e-13);
    assert!(sec.f[1].is_zero());
}

#[test]
fn ex2_drift_second_average() {
    let (b0, c0, eps) = (0.5, -1.0, 0.5);
    let spec = with(
        Base::Ex2,
        "ex2",
        &[("B0", b0), ("C0", c0), ("eps", eps), ("s1", 5.0), ("B1", 1.0)],
    );
    let avg = average_first(&spec.build().unwrap(), 2).unwrap();
    let sec = average_second(&avg).unwrap();
    let d = sec.f[2].denom();
    let want = TrigPoly::term((16.0 * b0 + 3.0 * eps * eps) / 32.0, 1, Kind::Const, 0, 0, d)
        .add(&TrigPoly::term(4.0 * c0 / 32.0, 3, Kind::Const, 0, 0, d))
        .unwrap();
    assert!(sec.f[2].max_coeff_diff(&want).unwrap() < 1e-13);
}

#[test]
fn ex2_without_noise_keeps_rotated_coupling() {
    let spec = with(Base::Ex2, "ex2", &[("eps", 0.0), ("B1", 0.8), ("B0", -0.3)]);
    let avg = average_first(&spec.build().unwrap(), 2).unwrap();
    // Q₁ = 4|B₁|, θ₀ = ±π/2: Λ₂ = (r/32)(16B₀ + 4C₀r²) + (B₁/4) r sin2ψ
    let (r, psi) = (0.9f64, 0.37f64);
    let want = r / 32.0 * (16.0 * -0.3 + -4.0 * r * r) + 0.8 / 4.0 * r * (2.0 * psi).sin();
    assert!((avg.lambda[2].eval(r, psi, 0.0).unwrap() - want).abs() < 1e-13);
}

#[test]
fn averaged_json_names() {
    let spec = preset("ex0").unwrap().spec;
    let avg = average_first(&spec.build().unwrap(), 2).unwrap();
    let text = serde_json::to_string(&avg).unwrap();
    assert!(text.contains("\"Lambda\"") && text.contains("\"Omega\""));
}
