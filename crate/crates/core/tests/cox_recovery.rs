//! The fitted Cox model recovers the generator's coefficients on synthetic
//! data, and the score at the optimum behaves like a true gradient.

use survcf::{fit_cox, generate_synthetic, CoxFitOptions, GeneratorConfig};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

#[test]
fn fitted_coefficients_track_the_generator() {
    let truth = vec![0.1, 0.9, 0.35, 0.6, 0.05];
    let config = GeneratorConfig::new(2000, 5, truth.clone(), 7);
    let ds = generate_synthetic(&config).unwrap();
    let (model, report) = fit_cox(&ds, &CoxFitOptions::default()).unwrap();
    assert!(report.converged);
    assert!(report.gradient_norm <= 1e-6);

    let corr = pearson(model.coeffs(), &truth);
    assert!(corr >= 0.9, "correlation {corr} below 0.9");

    // matching signs wherever the true effect is strong
    for (fitted, true_b) in model.coeffs().iter().zip(&truth) {
        if true_b.abs() >= 0.2 {
            assert!(
                fitted * true_b > 0.0,
                "sign mismatch: fitted {fitted} vs true {true_b}"
            );
        }
    }
}

#[test]
fn score_matches_finite_differences_away_from_the_optimum() {
    let truth = vec![0.4, 0.7];
    let config = GeneratorConfig::new(300, 2, truth, 19);
    let ds = generate_synthetic(&config).unwrap();
    let (model, _) = fit_cox(&ds, &CoxFitOptions::default()).unwrap();

    // displaced point where the gradient has healthy magnitude
    let probe: Vec<f64> = model.coeffs().iter().map(|b| b + 0.1).collect();
    let (_, score, _) = survcf::cox::partial_likelihood_parts(&ds, &probe);
    let h = 1e-6;
    for j in 0..2 {
        let mut plus = probe.clone();
        let mut minus = probe.clone();
        plus[j] += h;
        minus[j] -= h;
        let (ll_plus, _, _) = survcf::cox::partial_likelihood_parts(&ds, &plus);
        let (ll_minus, _, _) = survcf::cox::partial_likelihood_parts(&ds, &minus);
        let fd = (ll_plus - ll_minus) / (2.0 * h);
        let rel = (score[j] - fd).abs() / fd.abs().max(1.0);
        assert!(rel <= 1e-5, "component {j}: score {} vs fd {fd}", score[j]);
    }
}
