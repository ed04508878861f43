//! Acceptance suite. Each check prints one `PASS`/`FAIL` line (run with
//! `--nocapture` to see them) and asserts its outcome.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use beaconpark_core::eddystone::{decode_frame, encode_frame, encode_url, BeaconFrame, Instance, Namespace, Temperature};
use beaconpark_core::filter::{FilterConfig, FilterState, ParticleFilter};
use beaconpark_core::parking::protocol::{handle_line, SimulatedClock};
use beaconpark_core::parking::{Lot, LotConfig, ParkingService, SpotState, StubGateway};
use beaconpark_core::pathloss::{fit_model, PathLossModel};
use beaconpark_core::simulator::{
    calibrate_noise, calibration_distances, distance_grid, generate_calibration, indoor_proximity_grid,
    outdoor_proximity_grid, percentile, run_distance_experiment, run_proximity_experiment, ProximityCell, Scenario,
};
use beaconpark_core::SpotId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn report(id: &str, what: &str, pass: bool, detail: String) -> bool {
    println!("[{}] criterion {id}: {what} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

#[test]
fn c1_pathloss_inverse_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(0.5..6.0);
        let c = rng.random_range(-110.0..-30.0);
        let d = rng.random_range(0.05..100.0);
        let m = PathLossModel::new(n, c).unwrap();
        let back = m.estimate_distance(m.predict_rssi(d).unwrap());
        worst = worst.max(((back - d) / d).abs());
    }
    let pass = worst < 1e-9;
    assert!(report("1", "path-loss inverse over 10^4 triples", pass, format!("max rel err {worst:.2e}")));
}

#[test]
fn c2_calibration_recovery() {
    let distances = calibration_distances();
    let mut worst = 0.0f64;
    for model in [PathLossModel::INDOOR, PathLossModel::OUTDOOR] {
        let data = generate_calibration(&Scenario::new(model, 0.0, 1.0, 0), &distances).unwrap();
        let fit = fit_model(&data).unwrap();
        worst = worst.max((fit.model.n - model.n).abs()).max((fit.model.c - model.c).abs());
    }
    let exact = worst < 1e-6;

    let mut covered = 0;
    for trial in 0..100 {
        let scenario = Scenario::new(PathLossModel::INDOOR, 2.0, 60.0, 1000 + trial);
        let data = generate_calibration(&scenario, &distances).unwrap();
        assert!(data.points().iter().all(|p| p.samples.len() == 60));
        let fit = fit_model(&data).unwrap();
        if fit.n_ci95.0 <= PathLossModel::INDOOR.n && PathLossModel::INDOOR.n <= fit.n_ci95.1 {
            covered += 1;
        }
    }
    let coverage = covered >= 93;
    // Context only: the long-run rate over a larger independent seed block.
    let wide = (0..10_000u64)
        .filter(|t| {
            let scenario = Scenario::new(PathLossModel::INDOOR, 2.0, 60.0, 1_000_000 + t);
            let fit = fit_model(&generate_calibration(&scenario, &distances).unwrap()).unwrap();
            fit.n_ci95.0 <= PathLossModel::INDOOR.n && PathLossModel::INDOOR.n <= fit.n_ci95.1
        })
        .count();
    let a = report("2a", "noiseless recovery within 1e-6", exact, format!("max abs err {worst:.2e}"));
    let b = report(
        "2b",
        "95% CI covers true n in >= 93/100 trials",
        coverage,
        format!("{covered}/100; long-run coverage {wide}/10000"),
    );
    assert!(a && b);
}

#[test]
fn c3_filter_convergence() {
    let mut all = true;
    let mut misses = Vec::new();
    for k in 1..=8 {
        let d = k as f64 * 0.5;
        let mut f = ParticleFilter::new(FilterConfig::default().with_seed(k)).unwrap();
        for _ in 0..60 {
            f.update(d).unwrap();
        }
        let err = (f.estimate().mean - d).abs();
        if err >= 0.05 {
            all = false;
            misses.push(format!("d={d}: {err:.3}"));
        }
    }
    let detail = if misses.is_empty() { "all 8 distances".to_string() } else { misses.join(", ") };
    assert!(report("3", "noiseless convergence within 0.05 m after 60 updates", all, detail));
}

#[test]
fn c4_resampling() {
    // (a) and (b): random update sequences on a small filter.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut resamples = 0u64;
    let mut worst_neff = 0.0f64;
    let mut worst_sum = 0.0f64;
    for seq in 0..100_000u64 {
        let cfg = FilterConfig {
            particle_count: rng.random_range(2..64),
            beta: rng.random_range(0.05..1.0),
            measurement_noise: rng.random_range(0.2..2.0),
            ..FilterConfig::default()
        }
        .with_seed(seq);
        let mut f = ParticleFilter::new(cfg).unwrap();
        worst_sum = worst_sum.max((f.state().weights().iter().sum::<f64>() - 1.0).abs());
        for _ in 0..rng.random_range(1..6) {
            let outcome = f.update(rng.random_range(-1.0..5.0)).unwrap();
            let n = f.state().len() as f64;
            if outcome.resampled {
                resamples += 1;
                worst_neff = worst_neff.max((f.effective_particles() - n).abs() / n);
            }
            worst_sum = worst_sum.max((f.state().weights().iter().sum::<f64>() - 1.0).abs());
        }
    }
    let a = report(
        "4a",
        "N_eff == N after every resample",
        worst_neff < 1e-9 && resamples > 0,
        format!("{resamples} resamples, max rel dev {worst_neff:.1e}"),
    );
    let b = report("4b", "weights sum to 1 +/- 1e-9", worst_sum <= 1e-9, format!("max dev {worst_sum:.1e}"));

    // (c): multiplicities of a 4-particle state against its weights.
    let weights = [0.1, 0.2, 0.3, 0.4];
    let mut counts = [0u64; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..10_000 {
        let mut s = FilterState::from_parts(vec![0.0, 1.0, 2.0, 3.0], weights.to_vec()).unwrap();
        s.resample(&mut rng);
        for &p in s.particles() {
            counts[p as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(weights)
        .map(|(&o, w)| {
            let e = w * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
    let c = report(
        "4c",
        "chi-square of resampled multiplicities at alpha 0.01",
        stat < critical,
        format!("stat {stat:.2} < {critical:.2}, counts {counts:?}"),
    );
    assert!(a && b && c);
}

/// Shadowing sigma per environment, matched to the raw accuracy anchors.
struct Calibrated {
    indoor_sigma: f64,
    outdoor_sigma: f64,
    indoor: Vec<ProximityCell>,
    outdoor: Vec<ProximityCell>,
}

const PROXIMITY_DURATION_S: f64 = 300.0;
const PROXIMITY_REPS: u32 = 3;

fn calibrated() -> &'static Calibrated {
    static CELLS: OnceLock<Calibrated> = OnceLock::new();
    CELLS.get_or_init(|| {
        let indoor = Scenario::new(PathLossModel::INDOOR, 0.0, PROXIMITY_DURATION_S, 2024);
        let outdoor = Scenario::new(PathLossModel::OUTDOOR, 0.0, PROXIMITY_DURATION_S, 2024);
        let indoor_sigma = calibrate_noise(&indoor, 1.0, 0.5, 0.778, PROXIMITY_REPS).unwrap();
        let outdoor_sigma = calibrate_noise(&outdoor, 2.7, 2.5, 0.801, PROXIMITY_REPS).unwrap();
        let config = FilterConfig::default().with_seed(77);
        let run = |s: Scenario, sigma: f64, grid: &[(f64, f64)]| {
            let s = Scenario { noise_sigma_db: sigma, ..s };
            run_proximity_experiment(&s, grid, &config, PROXIMITY_REPS).unwrap()
        };
        Calibrated {
            indoor_sigma,
            outdoor_sigma,
            indoor: run(indoor, indoor_sigma, &indoor_proximity_grid()),
            outdoor: run(outdoor, outdoor_sigma, &outdoor_proximity_grid()),
        }
    })
}

fn cell_list(cells: &[&ProximityCell]) -> String {
    cells
        .iter()
        .map(|c| format!("({},{})={:.1}%", c.x, c.y, c.filtered.accuracy_pct()))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn c5a_wide_spacing_filtered_accuracy() {
    let cal = calibrated();
    let cells: Vec<_> = cal.indoor.iter().filter(|c| c.x >= 2.0 && c.y <= 2.0).collect();
    let pass = cells.iter().all(|c| c.filtered.accuracy() >= 0.95);
    let detail = format!("sigma {} dB; {}", cal.indoor_sigma, cell_list(&cells));
    assert!(report("5a", "indoor filtered >= 95% for X >= 2, Y <= 2", pass, detail));
}

#[test]
fn c5b_filter_beats_raw() {
    let cal = calibrated();
    let (raw, filtered) = cal
        .indoor
        .iter()
        .filter(|c| c.y <= 2.0)
        .fold((0, 0), |(r, f), c| (r + c.raw.correct(), f + c.filtered.correct()));
    let pass = filtered >= raw;
    assert!(report("5b", "filtered >= raw summed over Y <= 2", pass, format!("filtered {filtered} vs raw {raw}")));
}

#[test]
fn c5c_far_row_filtered_accuracy() {
    let cal = calibrated();
    let cells: Vec<_> = cal.indoor.iter().filter(|c| c.y == 2.5 && c.x <= 2.5).collect();
    let pass = cells.iter().all(|c| c.filtered.accuracy() < 0.5);
    let detail = format!("sigma {} dB; {}", cal.indoor_sigma, cell_list(&cells));
    assert!(report("5c", "indoor filtered < 50% for Y = 2.5, X <= 2.5", pass, detail));
}

#[test]
fn c5d_outdoor_filtered_accuracy() {
    let cal = calibrated();
    let cells: Vec<_> = cal.outdoor.iter().filter(|c| c.y <= 2.0).collect();
    let pass = cells.iter().all(|c| c.filtered.accuracy() >= 0.95);
    let detail = format!("sigma {} dB; {}", cal.outdoor_sigma, cell_list(&cells));
    assert!(report("5d", "outdoor X = 2.7 filtered >= 95% for Y <= 2", pass, detail));
}

#[test]
fn c6_distance_error_structure() {
    let sigma = calibrated().indoor_sigma;
    let scenario = Scenario::new(PathLossModel::INDOOR, sigma, 120.0, 606);
    let report_ = run_distance_experiment(&scenario, &distance_grid(), &FilterConfig::default().with_seed(6), 3).unwrap();
    let mean = |near: bool| {
        let v: Vec<f64> = report_
            .rows
            .iter()
            .filter(|r| (r.distance <= 2.0) == near)
            .map(|r| r.filtered_error)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (near, far) = (mean(true), mean(false));
    let a = report(
        "6a",
        "mean filtered error d <= 2 m below d > 2 m",
        near < far,
        format!("{near:.3} m vs {far:.3} m"),
    );
    let raw95 = percentile(&report_.raw_step_errors(), 0.95);
    let filt95 = percentile(&report_.filtered_step_errors(), 0.95);
    let b = report(
        "6b",
        "filtered 95th-percentile error below raw",
        filt95 < raw95,
        format!("{filt95:.3} m vs {raw95:.3} m"),
    );
    assert!(a && b);
}

fn golden_expected(desc: &str) -> BeaconFrame {
    let mut words = desc.split_whitespace();
    let kind = words.next().unwrap();
    let fields: BTreeMap<&str, &str> = words.map(|w| w.split_once('=').unwrap()).collect();
    match kind {
        "UID" => BeaconFrame::Uid {
            namespace: fields["ns"].parse::<Namespace>().unwrap(),
            instance: fields["inst"].parse::<Instance>().unwrap(),
            tx_power_at_0m: fields["tx"].parse().unwrap(),
        },
        "URL" => BeaconFrame::url(fields["url"], fields["tx"].parse().unwrap()).unwrap(),
        "TLM" => BeaconFrame::Tlm {
            battery_mv: fields["vbatt"].parse().unwrap(),
            temperature: Temperature(fields["temp"].parse().unwrap()),
            adv_count: fields["adv"].parse().unwrap(),
            uptime_decis: fields["sec"].parse().unwrap(),
        },
        other => panic!("unknown golden kind {other}"),
    }
}

#[test]
fn c7_codec_golden_and_fuzz() {
    let text = include_str!("data/eddystone_golden.txt");
    let mut lines = 0;
    let mut bad = Vec::new();
    let mut codes_seen = [false; 14];
    let mut kinds = [0usize; 3];
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        lines += 1;
        let (hexstr, desc) = line.split_once(' ').unwrap();
        let bytes = hex::decode(hexstr).unwrap();
        let expected = golden_expected(desc);
        let ok = match decode_frame(&bytes) {
            Ok(frame) => frame == expected && encode_frame(&frame).unwrap() == bytes,
            Err(_) => false,
        };
        if !ok {
            bad.push(hexstr.to_string());
        }
        match &expected {
            BeaconFrame::Uid { .. } => kinds[0] += 1,
            BeaconFrame::Url { encoded_body, .. } => {
                kinds[1] += 1;
                let text = expected.url_text().unwrap().unwrap();
                if encode_url(&text).unwrap().1 != *encoded_body {
                    bad.push(format!("{hexstr} (url compression)"));
                }
                for &b in encoded_body {
                    if (b as usize) < codes_seen.len() {
                        codes_seen[b as usize] = true;
                    }
                }
            }
            BeaconFrame::Tlm { .. } => kinds[2] += 1,
        }
    }
    let golden = bad.is_empty() && lines >= 30 && codes_seen.iter().all(|&s| s) && kinds.iter().all(|&k| k > 0);
    let a = report(
        "7a",
        "golden frames round-trip",
        golden,
        format!("{lines} frames (uid/url/tlm {kinds:?}), mismatches {bad:?}"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut buf = [0u8; 40];
    let mut decoded = 0u32;
    for i in 0..1_000_000u32 {
        let len = rng.random_range(0..=buf.len());
        rng.fill(&mut buf[..len]);
        // bias a share of inputs toward valid frame-type bytes
        if len > 0 && i % 2 == 0 {
            buf[0] = [0x00, 0x10, 0x20, 0x30][(i as usize / 2) % 4];
        }
        if decode_frame(&buf[..len]).is_ok() {
            decoded += 1;
        }
    }
    let b = report("7b", "10^6 random decodes without panic", true, format!("{decoded} decoded ok"));
    assert!(a && b);
}

/// Commands the exhaustive enumeration draws from.
fn alphabet() -> Vec<String> {
    let mut cmds = Vec::new();
    for spot in ["A1", "A2"] {
        cmds.push(format!("REGISTER {spot} alice P1 tok"));
        cmds.push(format!("REGISTER {spot} bob P2 tok 45"));
        cmds.push(format!("REGISTER {spot} carol P3 {} 45", StubGateway::NOFUNDS));
        cmds.push(format!("REGISTER {spot} dave P4 {}", StubGateway::DECLINE));
        cmds.push(format!("UNREGISTER {spot}"));
        cmds.push(format!("SETTLE {spot}"));
    }
    cmds.push("TICK 1800".into());
    cmds
}

fn kind(state: &SpotState) -> u8 {
    match state {
        SpotState::Available => 0,
        SpotState::Occupied(_) => 1,
        SpotState::Illegal(_) => 2,
    }
}

/// Checks one command's effect on the lot; returns a description of any violation.
fn check_step(before: &Lot, after: &Lot, cmd: &str, reply: &str) -> Option<String> {
    let mut words = cmd.split_whitespace();
    let verb = words.next().unwrap();
    let target: Option<SpotId> = words.next().and_then(|w| w.parse().ok());
    let (a, o, i) = after.census();
    if a + o + i != 2 {
        return Some("spot count changed".into());
    }
    for (b, s) in before.spots().zip(after.spots()) {
        let on_target = target == Some(s.id);
        let allowed = match (kind(&b.state), kind(&s.state)) {
            (x, y) if x == y => b.state == s.state,
            (0, 1) => verb == "REGISTER" && on_target && reply.starts_with("OK"),
            (1, 0) | (1, 2) => (verb == "UNREGISTER" && on_target) || verb == "TICK",
            (2, 0) => verb == "SETTLE" && on_target && reply == "OK",
            _ => false,
        };
        if !allowed {
            return Some(format!("{} {} -> {} on {cmd:?}", s.id, b.state.name(), s.state.name()));
        }
    }
    None
}

#[test]
fn c8_parking_state_machine() {
    let config = LotConfig::uniform('A', 2, 200);
    let cmds = alphabet();
    let dir = tempfile::tempdir().unwrap();
    let mut sequences = 0u64;
    let mut violations = Vec::new();
    let mut replay_mismatch = 0u64;

    // Enumerate every sequence of length 0..=5 as a base-|alphabet| counter.
    for len in 0..=5u32 {
        let count = (cmds.len() as u64).pow(len);
        for code in 0..count {
            sequences += 1;
            let path = dir.path().join(format!("j{len}_{code}.jsonl"));
            let mut svc = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
            svc.set_journal_sync(false);
            let clock = SimulatedClock::new(0);
            let mut c = code;
            for _ in 0..len {
                let cmd = &cmds[(c % cmds.len() as u64) as usize];
                c /= cmds.len() as u64;
                let before = svc.lot().clone();
                let reply = handle_line(&mut svc, &clock, cmd);
                if let Some(v) = check_step(&before, svc.lot(), cmd, &reply) {
                    violations.push(v);
                }
            }
            // conservation: money charged equals the cost of every paid closing
            let lot = svc.lot();
            let charged: u64 = svc.gateway().charged.iter().map(|(_, c)| c).sum();
            let illegal = lot.census().2;
            let failed_alerts = lot
                .alerts()
                .iter()
                .filter(|a| matches!(a, beaconpark_core::AdminAlert::ChargeFailed { .. }))
                .count();
            if illegal > failed_alerts {
                violations.push(format!("illegal spot without alert after sequence {code}"));
            }
            if charged > 0 && svc.gateway().charged.iter().any(|(t, _)| t != "tok") {
                violations.push("charged a failing card".into());
            }
            let expected = lot.clone();
            drop(svc);
            let replayed = ParkingService::open(&config, &path, StubGateway::default()).unwrap();
            if replayed.lot() != &expected {
                replay_mismatch += 1;
            }
            std::fs::remove_file(&path).unwrap();
        }
    }
    violations.truncate(5);
    let a = report(
        "8a",
        "transition safety and conservation over all sequences of length <= 5",
        violations.is_empty(),
        format!("{sequences} sequences, violations {violations:?}"),
    );
    let c = report(
        "8c",
        "journal replay reproduces state",
        replay_mismatch == 0,
        format!("{replay_mismatch} mismatches of {sequences}"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut wrong = 0;
    for _ in 0..10_000 {
        let rate: u64 = rng.random_range(0..100_000);
        let start: u64 = rng.random_range(0..1_000_000_000);
        let dt: u64 = rng.random_range(0..10 * 86_400);
        let mut cfg = LotConfig::uniform('A', 1, rate);
        cfg.spots[0].rate_cents_per_hour = rate;
        let mut svc = ParkingService::new(Lot::from_config(&cfg).unwrap(), StubGateway::default());
        let spot: SpotId = "A1".parse().unwrap();
        let user = beaconpark_core::UserProfile {
            user_id: "u".into(),
            vehicle_plate: "p".into(),
            card_token: "tok".into(),
        };
        svc.register(spot, user, start, None).unwrap();
        let cost = svc.unregister(spot, start + dt).unwrap().cost_cents.unwrap();
        let minutes = (dt as f64 / 60.0).ceil();
        let oracle = (rate as f64 * minutes / 60.0).ceil() as u64;
        if cost != oracle {
            wrong += 1;
        }
    }
    let b = report("8b", "cost == ceil(rate * minutes / 60) over 10^4 cases", wrong == 0, format!("{wrong} wrong"));
    assert!(a && b && c);
}
