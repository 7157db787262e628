use ulif_core::analysis::{aggregate_fit, analyze, analyze_cell};
use ulif_core::bound::l_stats;
use ulif_core::channel::{coupling_gain_l, ChannelParams, FadingModel};
use ulif_core::fit::MgfFitConfig;
use ulif_core::geometry::{effective_region, DensityKernel, Point, PositionModel, Region};
use ulif_core::montecarlo::{
    dkw_slack, ks_distance, simulate_aggregate, simulate_cell, substream, Execution, Variate,
};
use ulif_core::scenario::{build_hotspot_layout, build_single_cell, prepare, DensitySpec, PreparedCell};

/// A cell whose UE sits (almost) at `z`.
fn tiny_cell(id: u32, bs: Point, z: Point) -> PreparedCell {
    let positions = PositionModel::new(Region::disk(z, 1e-9), DensityKernel::Uniform, &[], |_| [0.0; 0]).unwrap();
    PreparedCell { id, bs, positions }
}

#[test]
fn coupling_gain_moments_match_monte_carlo() {
    let s = build_single_cell(0.02, DensitySpec::inverse_radial(), FadingModel::None);
    let cells = prepare(&s).unwrap();
    let cell = &cells[0];
    let stats = l_stats(&cell.positions, cell.bs, s.victim_bs, &s.channel);
    let n = 400_000u64;
    let ls: Vec<f64> = (0..n)
        .map(|d| {
            let z = cell.positions.sample(&mut substream(3, cell.id, d, Variate::Position)).unwrap();
            coupling_gain_l(z, cell.bs, s.victim_bs, &s.channel).unwrap()
        })
        .collect();
    let mean = ls.iter().sum::<f64>() / n as f64;
    let var = ls.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let m4 = ls.iter().map(|l| (l - mean).powi(4)).sum::<f64>() / n as f64;
    assert!((mean - stats.mu_l).abs() < 4.0 * (var / n as f64).sqrt(), "{mean} vs {}", stats.mu_l);
    assert!((var - stats.sigma_l2).abs() < 4.0 * ((m4 - var * var) / n as f64).sqrt(), "{var} vs {}", stats.sigma_l2);
}

#[test]
fn deterministic_limit_reproduces_the_coupling_gain() {
    let params = ChannelParams { sigma_shad_db: 1e-12, ..ChannelParams::default() };
    let (victim, bs, z) = (Point::new(0.0, 0.0), Point::new(0.1, 0.0), Point::new(0.11, 0.02));
    let cell = tiny_cell(2, bs, z);
    let expected = params.p0_dbm + coupling_gain_l(z, bs, victim, &params).unwrap();
    let set = simulate_cell(&cell, victim, &params, &FadingModel::None, 1000, 7, Execution::Serial).unwrap();
    assert!(set.values.iter().all(|v| (v - expected).abs() < 1e-6));
}

#[test]
fn two_equal_deterministic_cells_add_3_db() {
    let base = ChannelParams { sigma_shad_db: 1e-12, ..ChannelParams::default() };
    let victim = Point::new(0.0, 0.0);
    let (b1, z1) = (Point::new(0.1, 0.0), Point::new(0.11, 0.0));
    let (b2, z2) = (Point::new(-0.1, 0.0), Point::new(-0.11, 0.0));
    let l = coupling_gain_l(z1, b1, victim, &base).unwrap();
    let params = ChannelParams { p0_dbm: -100.0 - l, ..base };
    let cells = [tiny_cell(2, b1, z1), tiny_cell(3, b2, z2)];
    let set = simulate_aggregate(&cells, victim, &params, &FadingModel::None, 500, 1, Execution::Parallel).unwrap();
    assert!(set.values.iter().all(|v| (v - -96.9897).abs() < 1e-4), "{:?}", &set.values[..3]);
}

#[test]
fn single_cell_aggregate_equals_the_cell() {
    let s = build_single_cell(0.01, DensitySpec::Uniform, FadingModel::Rayleigh);
    let cells = prepare(&s).unwrap();
    let one = simulate_cell(&cells[0], s.victim_bs, &s.channel, &s.fading, 20_000, 4, Execution::Parallel).unwrap();
    let agg = simulate_aggregate(&cells, s.victim_bs, &s.channel, &s.fading, 20_000, 4, Execution::Parallel).unwrap();
    for (a, b) in one.values.iter().zip(&agg.values) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn sample_mean_matches_the_fitted_mean() {
    let s = build_single_cell(0.01, DensitySpec::Uniform, FadingModel::Rayleigh);
    let cells = prepare(&s).unwrap();
    let a = analyze_cell(&cells[0], &s).unwrap();
    let n = 1_000_000;
    let set = simulate_cell(&cells[0], s.victim_bs, &s.channel, &s.fading, n, 1, Execution::Parallel).unwrap();
    assert!((set.mean() - a.q.mu).abs() < 3.0 * a.q.sigma() / (n as f64).sqrt(), "{} vs {}", set.mean(), a.q.mu);
}

#[test]
fn seeds_reproduce_and_differ() {
    let s = build_single_cell(0.02, DensitySpec::Uniform, FadingModel::Rician { gamma: 10.0 });
    let cells = prepare(&s).unwrap();
    let run = |seed| simulate_cell(&cells[0], s.victim_bs, &s.channel, &s.fading, 5000, seed, Execution::Parallel).unwrap();
    assert_eq!(run(8), run(8));
    assert_ne!(run(8).values, run(9).values);
}

#[test]
fn gaussian_fit_error_matches_reference_measurement() {
    // Measured error of the Gaussian fit for the r = 0.01 uniform Rayleigh row: 1.9e-3,
    // well inside the analytic bound.
    let s = build_single_cell(0.01, DensitySpec::Uniform, FadingModel::Rayleigh);
    let cells = prepare(&s).unwrap();
    let a = analyze_cell(&cells[0], &s).unwrap();
    let n = 1_000_000;
    let set = simulate_cell(&cells[0], s.victim_bs, &s.channel, &s.fading, n, 1, Execution::Parallel).unwrap();
    let ks = ks_distance(&set, |q| a.q.cdf(q));
    assert!(ks <= a.bound.eps_total + dkw_slack(n, 0.01), "ks {ks} above bound {}", a.bound.eps_total);
    assert!((ks - 1.9e-3).abs() <= 1.5e-3, "ks {ks:.4e} outside 1.9e-3 ± 1.5e-3");
}

#[test]
fn single_cell_fit_is_lognormal() {
    let s = build_single_cell(0.04, DensitySpec::inverse_radial(), FadingModel::Rayleigh);
    let cells = prepare(&s).unwrap();
    let a = analyze(&s, &cells).unwrap();
    let agg = aggregate_fit(&a, &MgfFitConfig::default()).unwrap();
    assert!((agg.fit.lambda - 1.0).abs() <= 0.02, "{}", agg.fit.lambda);
    assert!((agg.fit.mu_q - a[0].q.mu).abs() < 0.05);
}

#[test]
fn hotspot_max_epsilon_matches_reference() {
    let s = build_hotspot_layout(84, 0.01, 1, DensitySpec::inverse_radial(), FadingModel::Rayleigh).unwrap();
    let cells = prepare(&s).unwrap();
    let a = analyze(&s, &cells).unwrap();
    let max = a.iter().map(|c| c.bound.eps_total).fold(0.0, f64::max);
    assert!(max > 5.1e-3 / 2.0 && max < 5.1e-3 * 2.0, "{max}");
}

#[test]
fn exclusion_removes_both_base_stations() {
    let s = build_single_cell(0.01, DensitySpec::Uniform, FadingModel::None);
    let cells = prepare(&s).unwrap();
    let cell = &cells[0];
    for d in 0..20_000 {
        let z = cell.positions.sample(&mut substream(2, cell.id, d, Variate::Position)).unwrap();
        assert!(z.dist(cell.bs) >= s.channel.d_min_km && z.dist(s.victim_bs) >= s.channel.d_min_km);
    }
    let eff = effective_region(&s.cells[0].region, cell.bs, s.channel.d_min_km).unwrap();
    assert!(!eff.contains(cell.bs));
}
