//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL`
//! line; the process exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use fedbal::client::{
    build_metadata, max_trainable_size, run_client_round, select_samples, split_by_threshold, ClientSettings,
    ClientStreams, LossLedger, RoundOutcome,
};
use fedbal::data::{DatasetHandle, SyntheticTask, TraceRecord};
use fedbal::model::{gradient_check, init_model, Layout};
use fedbal::report::{time_to_accuracy, RoundRow};
use fedbal::server::{find_peak_ddl_e, select_loss_threshold, update_controller, ControllerState};
use fedbal::sim::run_experiment;
use fedbal::{load_config, seeded_rng, ClientProfile, DeadlinePolicy, ExperimentConfig, FbParams, Method, RoundPlan};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rows(records: &[fedbal::RoundRecord]) -> Vec<RoundRow> {
    records.iter().map(RoundRow::from).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// FedAvg+1T and FedBalancer on the reference scenario. FedBalancer runs
/// until FedAvg's total wall clock for the same seed.
fn c1_directional() -> Verdict {
    let started = Instant::now();
    let fedavg = load_config(configs_dir().join("reference_fedavg.json")).unwrap();
    let fedbal = load_config(configs_dir().join("reference_fedbalancer.json")).unwrap();
    let (mut t_fa, mut t_fb, mut acc_fa, mut acc_fb) = (vec![], vec![], vec![], vec![]);
    for seed in 1..=3 {
        let mut a = fedavg.clone();
        a.seed = seed;
        let fa = rows(&run_experiment(&a).unwrap().records);
        let last = fa.last().unwrap();
        let target = last.test_accuracy;

        let mut b = fedbal.clone();
        b.seed = seed;
        b.wallclock_budget_s = Some(last.wallclock_s);
        let fb = rows(&run_experiment(&b).unwrap().records);

        t_fa.push(time_to_accuracy(&fa, target).unwrap());
        t_fb.push(time_to_accuracy(&fb, target).unwrap_or(fb.last().unwrap().wallclock_s));
        acc_fa.push(target);
        acc_fb.push(fb.last().unwrap().test_accuracy);
    }
    let ratio = mean(&t_fb) / mean(&t_fa);
    let (afa, afb) = (mean(&acc_fa), mean(&acc_fb));
    let secs = started.elapsed().as_secs_f64();
    Verdict {
        id: 1,
        name: "directional end-to-end speedup",
        pass: ratio <= 0.9 && afb >= afa - 0.005 && secs < 600.0,
        detail: format!(
            "time ratio {ratio:.3} (speedup {:.2}x, need <= 0.9), final acc {afb:.4} vs {afa:.4}, {secs:.1}s",
            1.0 / ratio
        ),
    }
}

fn brute_force_peak(times: &[f64]) -> f64 {
    let t_max = times.iter().copied().fold(1.0, f64::max).ceil() as u64;
    let (mut best_t, mut best) = (1, f64::MIN);
    for t in 1..=t_max {
        let ratio = times.iter().filter(|&&c| c <= t as f64).count() as f64 / t as f64;
        if ratio > best {
            best = ratio;
            best_t = t;
        }
    }
    best_t as f64
}

fn c2_ddl_e() -> Verdict {
    let started = Instant::now();
    let mut rng = seeded_rng(2024, 0);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let size = rng.random_range(1..=200);
        let median: f64 = rng.random_range(2.0..60.0);
        let dist = LogNormal::new(median.ln(), rng.random_range(0.1..1.2)).unwrap();
        let times: Vec<f64> = (0..size).map(|_| dist.sample(&mut rng)).collect();
        if find_peak_ddl_e(&times).unwrap() != brute_force_peak(&times) {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Verdict {
        id: 2,
        name: "DDL-E peak equals brute force",
        pass: mismatches == 0 && secs < 10.0,
        detail: format!("{mismatches}/1000 mismatches, {secs:.2}s"),
    }
}

fn c3_controller() -> Verdict {
    let params = FbParams {
        w: 2,
        lss: 0.75,
        dss: 0.75,
        ..FbParams::default()
    };
    let u = [1.0, 1.0, 2.0, 2.0, 1.5, 1.5, 0.5, 0.5];
    let expected = [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.75, 0.25), (0.75, 0.25), (1.0, 0.0)];
    let mut state = ControllerState::new(&params);
    let mut got = Vec::new();
    for (r, &ur) in u.iter().enumerate() {
        update_controller(&mut state, r + 1, ur, 1, 1.0, &params);
        got.push((state.ltr, state.ddlr));
    }
    Verdict {
        id: 3,
        name: "controller scripted trace",
        pass: got == expected,
        detail: format!("states {got:?}"),
    }
}

fn c4_threshold() -> Verdict {
    let mut rng = seeded_rng(77, 0);
    let mut worst: f64 = 0.0;
    let mut endpoints = true;
    for _ in 0..500 {
        let n = rng.random_range(1..=30);
        let llow: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let lhigh: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..6.0)).collect();
        let ltr: f64 = rng.random_range(0.0..=1.0);
        let ll = llow.iter().copied().fold(f64::INFINITY, f64::min);
        let lh = lhigh.iter().sum::<f64>() / n as f64;
        let want = if lh < ll { ll } else { ll + (lh - ll) * ltr };
        worst = worst.max((select_loss_threshold(&llow, &lhigh, ltr).unwrap() - want).abs());
        endpoints &= select_loss_threshold(&llow, &lhigh, 0.0).unwrap() == ll;
        endpoints &= (select_loss_threshold(&llow, &lhigh, 1.0).unwrap() - lh.max(ll)).abs() <= 1e-12;
    }
    Verdict {
        id: 4,
        name: "threshold interpolation",
        pass: worst <= 1e-12 && endpoints,
        detail: format!("max abs error {worst:e}, endpoints {}", if endpoints { "ok" } else { "wrong" }),
    }
}

fn csv_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    fedbal::report::write_rounds_csv(&run_experiment(cfg).unwrap().records, &mut buf).unwrap();
    buf
}

fn c5_prox_fedavg() -> Verdict {
    let mut fedavg = load_config(configs_dir().join("reference_fedavg.json")).unwrap();
    fedavg.deadline_policy = DeadlinePolicy::WaitForAll;
    fedavg.rounds = 40;
    let mut equal = 0;
    for seed in 1..=3 {
        fedavg.seed = seed;
        let mut prox = fedavg.clone();
        prox.method = Method::Prox;
        prox.prox_mu = 0.0;
        if csv_bytes(&fedavg) == csv_bytes(&prox) {
            equal += 1;
        }
    }
    Verdict {
        id: 5,
        name: "prox with mu=0 equals fedavg under wait_for_all",
        pass: equal == 3,
        detail: format!("{equal}/3 seeds byte-identical"),
    }
}

fn c6_gradients() -> Verdict {
    let mut worst = Vec::new();
    for hidden in [0, 6] {
        let mut rng = seeded_rng(11, hidden as u64);
        let mut w: f64 = 0.0;
        for _ in 0..100 {
            let weights = init_model(Layout::new(8, hidden, 4), &mut rng);
            let x: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let ds = DatasetHandle::new(8, x, vec![rng.random_range(0..4)], 0, vec![0]);
            w = w.max(gradient_check(&weights, &ds, 0).unwrap());
        }
        worst.push(w);
    }
    Verdict {
        id: 6,
        name: "gradient check",
        pass: worst.iter().all(|&w| w < 1e-4),
        detail: format!("softmax {:e}, tanh hidden {:e}", worst[0], worst[1]),
    }
}

fn c7_metadata_noise() -> Verdict {
    let mut rng = seeded_rng(90, 0);
    let losses: Vec<f64> = (0..200).map(|_| rng.random_range(40.0..50.0)).collect();
    let exact = build_metadata(&losses, &losses, 0.0, &mut rng);
    let exact_f = [exact.llow, exact.lhigh, exact.ot_loss_sq_sum, exact.ot_len];

    let mut sorted = losses.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos: f64 = 0.8 * 199.0;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let oracle = [
        sorted[0],
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64),
        losses.iter().fold(0.0, |acc, l| acc + l * l),
        200.0,
    ];
    let bitwise = exact_f.iter().zip(&oracle).all(|(a, b)| a.to_bits() == b.to_bits());

    let mut pass = bitwise;
    let mut detail = format!("NF=0 bitwise {bitwise}");
    for nf in [0.5, 5.0] {
        let n = 100_000;
        let mut rng = seeded_rng(92, (nf * 10.0) as u64);
        let (mut s, mut sq) = ([0.0; 4], [0.0; 4]);
        for _ in 0..n {
            let m = build_metadata(&losses, &losses, nf, &mut rng);
            for (k, v) in [m.llow, m.lhigh, m.ot_loss_sq_sum, m.ot_len].iter().enumerate() {
                let e = v - exact_f[k];
                s[k] += e;
                sq[k] += e * e;
            }
        }
        let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
        for k in 0..4 {
            let m = s[k] / n as f64;
            let sd = (sq[k] / n as f64 - m * m).sqrt();
            worst_mean = worst_mean.max(m.abs() / nf);
            worst_std = worst_std.max((sd - nf).abs() / nf);
        }
        pass &= worst_mean <= 0.05 && worst_std <= 0.05;
        detail += &format!("; NF={nf}: |mean|/NF {worst_mean:.4}, |std-NF|/NF {worst_std:.4}");
    }
    Verdict {
        id: 7,
        name: "metadata noise statistics",
        pass,
        detail,
    }
}

fn ledger(losses: &[f64]) -> LossLedger {
    let mut l = LossLedger::new();
    l.initialize(losses.to_vec(), 1, 50.0);
    l
}

fn random_losses<R: Rng>(rng: &mut R) -> Vec<f64> {
    let n = rng.random_range(1..80);
    (0..n).map(|_| rng.random_range(0.0..10.0)).collect()
}

fn distinct(v: &[usize]) -> bool {
    v.iter().collect::<BTreeSet<_>>().len() == v.len()
}

fn c8_selection() -> Verdict {
    const TRIALS: usize = 10_000;
    let mut rng = seeded_rng(808, 0);
    let mut failures = [0usize; 5];

    for t in 0..TRIALS {
        let losses = random_losses(&mut rng);
        let n = losses.len();
        let p = rng.random_range(0.5..=1.0);
        let lt = rng.random_range(0.0..12.0);
        let seed = t as u64;

        // S ≥ |D| selects everything.
        let r = select_samples(&ledger(&losses), lt, n + rng.random_range(0..50), p, &mut seeded_rng(seed, 1));
        if !(r.used_full_dataset && r.selected_indices == (0..n).collect::<Vec<_>>()) {
            failures[0] += 1;
        }

        // lt above every loss: OT empty, L = S, all from UT.
        let max = losses.iter().copied().fold(f64::MIN, f64::max);
        let s = rng.random_range(0..n);
        let r = select_samples(&ledger(&losses), max + rng.random_range(1e-9..5.0), s, p, &mut seeded_rng(seed, 2));
        if !(r.ot_indices.is_empty() && r.l == s && r.selected_indices.len() == s && distinct(&r.selected_indices)) {
            failures[1] += 1;
        }

        // p = 1 and |OT| ≥ L: selected ⊆ OT.
        let (ot, _) = split_by_threshold(&losses, lt);
        let s = rng.random_range(0..=ot.len());
        if s < n {
            let r = select_samples(&ledger(&losses), lt, s, 1.0, &mut seeded_rng(seed, 3));
            let ot: BTreeSet<usize> = ot.iter().copied().collect();
            if !r.selected_indices.iter().all(|i| ot.contains(i)) {
                failures[3] += 1;
            }
        }

        // Raising lt never grows OT.
        let hi = lt + rng.random_range(0.0..5.0);
        let (ot_hi, _) = split_by_threshold(&losses, hi);
        let ot_lo: BTreeSet<usize> = ot.into_iter().collect();
        if !ot_hi.iter().all(|i| ot_lo.contains(i)) {
            failures[4] += 1;
        }
    }

    // Ledger entries change exactly on the selected indices.
    let layout = Layout::new(3, 0, 3);
    let mut cfg = ExperimentConfig::new(1, 1);
    cfg.method = Method::Fedbalancer;
    cfg.batch_size = 4;
    for t in 0..TRIALS {
        let seed = t as u64;
        let n = rng.random_range(5..60);
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let lt = rng.random_range(0.0..5.0);
        let deadline = rng.random_range(1.0..20.0);
        cfg.fb_params.p = rng.random_range(0.5..=1.0);
        cfg.local_epochs = rng.random_range(1..3);
        let mut drng = seeded_rng(seed, 4);
        let task = SyntheticTask::new(3, 3, 2.0, &mut drng).unwrap();
        let rec = TraceRecord {
            id: 0,
            download_s: vec![0.5],
            upload_s: vec![0.5],
            batch_latency_s: vec![0.1],
        };
        let profile = ClientProfile::from_trace(&rec, task.gen_iid(n, 0, 0, &mut drng)).unwrap();
        let plan = RoundPlan {
            round_index: 2,
            loss_threshold: lt,
            deadline,
            cohort: vec![0],
            model_version: Arc::new(init_model(layout, &mut drng)),
        };
        let before = ledger(&losses);
        let s = max_trainable_size(0.1, deadline, cfg.local_epochs, 4, 0.5, 0.5);
        let expected: BTreeSet<usize> =
            select_samples(&before, lt, s, cfg.fb_params.p, &mut ClientStreams::new(seed, 0, 2).selection)
                .selected_indices
                .into_iter()
                .collect();
        let mut after = before.clone();
        let settings = ClientSettings::from_config(&cfg);
        let out = run_client_round(&profile, &mut after, &plan, &settings, &mut ClientStreams::new(seed, 0, 2)).unwrap();
        let changed: BTreeSet<usize> = (0..n).filter(|&i| after.version(i) != before.version(i)).collect();
        let ok = match out {
            RoundOutcome::Completed(_) => changed == expected,
            RoundOutcome::TimedOut { .. } => changed.is_empty(),
        };
        if !ok {
            failures[2] += 1;
        }
    }

    Verdict {
        id: 8,
        name: "sample-selection invariants",
        pass: failures.iter().all(|&f| f == 0),
        detail: format!("failures per invariant {failures:?} over {TRIALS} trials each"),
    }
}

fn c9_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut identical = 0;
    let mut total = 0;
    for name in ["reference_fedavg.json", "reference_fedbalancer.json"] {
        let cfg = configs_dir().join(name);
        let mut outputs = Vec::new();
        for (k, threads) in ["1", "1", "8", "8"].iter().enumerate() {
            let out = tmp.path().join(format!("{name}-{k}"));
            let status = Command::new(env!("CARGO_BIN_EXE_fedbal"))
                .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .env("FEDBAL_THREADS", threads)
                .output()
                .unwrap()
                .status;
            assert!(status.success());
            outputs.push(std::fs::read(out.join("rounds.csv")).unwrap());
        }
        total += 1;
        if outputs.iter().all(|o| *o == outputs[0]) {
            identical += 1;
        }
    }
    Verdict {
        id: 9,
        name: "byte-identical rounds.csv across repeats and FEDBAL_THREADS",
        pass: identical == total,
        detail: format!("{identical}/{total} configs identical over 2 runs x threads {{1, 8}}"),
    }
}

fn c10_informative_fraction() -> Verdict {
    let base = load_config(configs_dir().join("reference_fedavg.json")).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let fr: Vec<f64> = run_experiment(&cfg).unwrap().records.iter().filter_map(|r| r.informative_fraction).collect();
        let q = fr.len() / 4;
        let (first, last) = (mean(&fr[..q]), mean(&fr[fr.len() - q..]));
        pass &= last < first;
        parts.push(format!("seed {seed}: {first:.3} -> {last:.3}"));
    }
    Verdict {
        id: 10,
        name: "informative fraction shrinks under fedavg",
        pass,
        detail: parts.join(", "),
    }
}

fn main() -> std::process::ExitCode {
    let checks: [fn() -> Verdict; 10] = [
        c1_directional,
        c2_ddl_e,
        c3_controller,
        c4_threshold,
        c5_prox_fedavg,
        c6_gradients,
        c7_metadata_noise,
        c8_selection,
        c9_determinism,
        c10_informative_fraction,
    ];
    let verdicts: Vec<Verdict> = checks.iter().map(|c| c()).collect();
    for v in &verdicts {
        println!("{} [{}] {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", verdicts.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
