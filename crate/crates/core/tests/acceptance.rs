//! Exit gate: one PASS/FAIL line per acceptance criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{blobs, class_marked, converge, fd_gradient, norm, random_vector, rel_err, small_graph, trained};
use ndarray::{array, s, Array1, Array2, Axis};
use unlearn_core::datasets::{split, DatasetTable, Subset};
use unlearn_core::eval::shift_report;
use unlearn_core::independence::{
    center, kernel_matrix, label_kernel, label_term, lf_grad_predictions, nhsic, plugin_mi, IndependenceConfig,
    KernelConfig, Normalization,
};
use unlearn_core::models::{combined_grad, grad, hvp, ModelSpec, Objective};
use unlearn_core::requests::{
    apply, random_request, topk_request, Replacement, RequestMode, Strategy, UnlearnRequest,
};
use unlearn_core::runner::{run, run_experiment, DatasetSource, ExperimentConfig};
use unlearn_core::unlearn::{
    influence_gradient, inverse_hvp_direct, inverse_hvp_lissa, unlearn, HessianOperator, LissaOptions,
    UnlearnConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_suite() -> Outcome {
    let cases = [
        (ModelSpec::new("logreg", 4, 3).with_l2(0.05), blobs(8, 4, 3, 1.5, 2)),
        (ModelSpec::new("mlp", 3, 3).with_hidden(4).with_l2(0.05), blobs(8, 3, 3, 1.5, 4)),
        (ModelSpec::new("gcn", 3, 3).with_hidden(4).with_l2(0.05), small_graph()),
    ];
    let indep = IndependenceConfig {
        alpha: 0.7,
        ..IndependenceConfig::default()
    };
    let (mut worst_grad, mut worst_sym, mut worst_combined) = (0.0f64, 0.0f64, 0.0f64);
    let mut small = true;
    for (spec, data) in &cases {
        let p = spec.param_count().unwrap();
        small &= p <= 60 && data.table().n_rows() <= 8;
        let theta = random_vector(p, 1) * 0.8;
        let obj = Objective::new(spec, data).unwrap();
        let numeric = fd_gradient(|t| obj.loss(t).unwrap().total, &theta, 1e-6);
        worst_grad = worst_grad.max(rel_err(&grad(spec, &theta, data).unwrap(), &numeric));

        let (v, w) = (random_vector(p, 10), random_vector(p, 11));
        let a = w.dot(&hvp(spec, &theta, data, &v).unwrap());
        let b = v.dot(&hvp(spec, &theta, data, &w).unwrap());
        worst_sym = worst_sym.max((a - b).abs() / a.abs().max(b.abs()));

        let obj = Objective::new(spec, data).unwrap().with_independence(0.8, &indep).unwrap();
        let numeric = fd_gradient(|t| obj.loss(t).unwrap().total, &theta, 1e-6);
        let (analytic, _) = combined_grad(spec, &theta, data, 0.8, &indep).unwrap();
        worst_combined = worst_combined.max(rel_err(&analytic, &numeric));
    }
    outcome(
        small && worst_grad <= 1e-4 && worst_sym <= 1e-6 && worst_combined <= 1e-4,
        format!("grad rel err {worst_grad:.1e}, HVP asymmetry {worst_sym:.1e}, combined grad rel err {worst_combined:.1e}"),
    )
}

fn brute_hsic(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let h = Array2::from_shape_fn((n, n), |(i, j)| f64::from(u8::from(i == j)) - 1.0 / n as f64);
    let prod = h.dot(a).dot(&h).dot(&h.dot(b).dot(&h));
    (0..n).map(|i| prod[[i, i]]).sum()
}

fn independence_suite() -> Outcome {
    let x = array![[0.1, 1.0], [1.5, -0.5], [2.0, 0.3], [-1.0, 0.7], [0.4, 0.4], [1.1, -2.0]];
    let labels = [0, 1, 1, 0, 2, 2];
    let mut trace_err = 0.0f64;
    for n in 4..=6 {
        let kx = kernel_matrix(x.slice(s![..n, ..]), &KernelConfig::rbf(0.9)).unwrap();
        let ky = label_kernel(&labels[..n], 3, &KernelConfig::delta()).unwrap();
        let got = nhsic(&center(&kx).unwrap(), &center(&ky).unwrap(), Normalization::RawTrace).unwrap();
        trace_err = trace_err.max((got - brute_hsic(&kx, &ky)).abs());
    }
    let kx = center(&kernel_matrix(x.view(), &KernelConfig::rbf_median()).unwrap()).unwrap();
    let constant = center(&label_kernel(&[1; 6], 3, &KernelConfig::delta()).unwrap()).unwrap();
    let constant_hsic = nhsic(&kx, &constant, Normalization::NMinus1Squared).unwrap().abs();
    let self_frob = nhsic(&kx, &kx, Normalization::Frobenius).unwrap();
    let coupled = [0, 1, 0, 1, 1, 0, 0, 1];
    let mi_err = (plugin_mi(&coupled, &coupled) - std::f64::consts::LN_2).abs();

    let p = array![[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.8, 0.1], [0.5, 0.25, 0.25], [0.3, 0.3, 0.4]];
    let xs = x.slice(s![..5, ..]).to_owned();
    let config = IndependenceConfig {
        alpha: 0.9,
        ..IndependenceConfig::default()
    };
    let kxs = center(&kernel_matrix(xs.view(), &config.feature_kernel).unwrap()).unwrap();
    let analytic: Array1<f64> = lf_grad_predictions(&kxs, p.view(), &config).unwrap().iter().copied().collect();
    let lf = |q: &Array1<f64>| {
        let q = q.to_shape((5, 3)).unwrap().to_owned();
        let kp = center(&kernel_matrix(q.view(), &config.prediction_kernel).unwrap()).unwrap();
        label_term(&kxs, &labels[..5], 3, &config).unwrap() - config.alpha * nhsic(&kxs, &kp, config.normalization).unwrap()
    };
    let flat: Array1<f64> = p.iter().copied().collect();
    let lf_err = rel_err(&analytic, &fd_gradient(lf, &flat, 1e-6));
    outcome(
        trace_err <= 1e-10 && constant_hsic <= 1e-12 && (self_frob - 1.0).abs() <= 1e-12 && mi_err <= 1e-12 && lf_err <= 1e-4,
        format!(
            "trace err {trace_err:.1e}, constant nhsic {constant_hsic:.1e}, self frobenius {self_frob:.12}, MI err {mi_err:.1e}, L_F grad rel err {lf_err:.1e}"
        ),
    )
}

fn solver_equivalence() -> Outcome {
    let data = blobs(200, 10, 2, 1.5, 1);
    let spec = ModelSpec::new("logreg", 10, 2).with_l2(0.1);
    let theta = trained(&spec, &data, &converge());
    let op = HessianOperator::for_data(&spec, &theta, &data, 0.0, &IndependenceConfig::default(), 0.01).unwrap();
    let v = random_vector(theta.len(), 9);
    let direct = inverse_hvp_direct(&op, &v).unwrap();
    let opt = LissaOptions {
        iterations: 2000,
        scale: 0.1,
        repeats: 1,
        probe_iterations: 10,
    };
    let lissa = inverse_hvp_lissa(&op, &v, &opt).unwrap();
    let err = norm(&(&lissa.x - &direct.x)) / norm(&direct.x);
    outcome(err <= 1e-3, format!("P = {}, ‖x_lissa − x_direct‖/‖x_direct‖ = {err:.2e}", theta.len()))
}

fn retrain_config(method: &str) -> UnlearnConfig {
    UnlearnConfig {
        train: converge(),
        ..UnlearnConfig::default()
    }
    .with_method(method)
}

/// `(‖θ*_influence − θ_retrain‖, ‖θ − θ_retrain‖)`.
fn fidelity(spec: &ModelSpec, data: &Subset, request: &UnlearnRequest) -> (f64, f64) {
    let theta = trained(spec, data, &converge());
    let applied = apply(data, request).unwrap();
    let oracle = unlearn(spec, &theta, data, &applied, &retrain_config("retrain")).unwrap().theta_star.values;
    let approx = unlearn(spec, &theta, data, &applied, &retrain_config("influence")).unwrap().theta_star.values;
    (norm(&(&approx - &oracle)), norm(&(&theta - &oracle)))
}

fn unlearning_fidelity() -> Outcome {
    let data = blobs(500, 10, 2, 1.0, 3);
    let spec = ModelSpec::new("logreg", 10, 2).with_l2(0.1);
    let random = random_request(&data, 0.05, RequestMode::Points, 4, 1.0).unwrap();
    let topk = topk_request(&data, 0.05, 0.2, RequestMode::Points).unwrap();
    let (g_random, m_random) = fidelity(&spec, &data, &random);
    let (g_topk, m_topk) = fidelity(&spec, &data, &topk);

    // A row duplicated at the end; removing the copy.
    let base = blobs(500, 10, 2, 1.0, 5);
    let t = base.table();
    let mut rows: Vec<usize> = (0..t.n_rows()).collect();
    rows.push(0);
    let x = t.features().select(Axis(0), &rows);
    let labels: Vec<usize> = rows.iter().map(|&r| t.labels()[r]).collect();
    let twins = Subset::full(DatasetTable::new(x, labels, 2).unwrap().into());
    let remove_copy = UnlearnRequest {
        mode: RequestMode::Points,
        strategy: Strategy::Random,
        replacement: Replacement::Zero,
        unlearn_ratio: 0.0,
        feature_ratio: 1.0,
        seed: 0,
        point_indices: vec![t.n_rows()],
        cells: Vec::new(),
    };
    let (g_twin, _) = fidelity(&spec, &twins, &remove_copy);
    outcome(
        g_random <= 0.5 * m_random && g_topk <= 0.5 * m_topk && g_twin <= 1e-2,
        format!(
            "random {g_random:.2e} vs {m_random:.2e}, top-k {g_topk:.2e} vs {m_topk:.2e}, twin point {g_twin:.2e}"
        ),
    )
}

fn dui_consistency() -> Outcome {
    let data = blobs(200, 6, 3, 1.0, 7);
    let spec = ModelSpec::new("logreg", 6, 3).with_l2(0.1);
    let theta = trained(&spec, &data, &converge());
    let applied = apply(&data, &random_request(&data, 0.1, RequestMode::Points, 1, 1.0).unwrap()).unwrap();
    let influence = unlearn(&spec, &theta, &data, &applied, &retrain_config("influence")).unwrap();
    let mut cfg = retrain_config("dui");
    cfg.lambda = 0.0;
    let dui = unlearn(&spec, &theta, &data, &applied, &cfg).unwrap();
    let distance = norm(&(&dui.theta_star.values - &influence.theta_star.values));

    let mut cfg = retrain_config("dui");
    cfg.independence.alpha = 0.0;
    let g_dui = influence_gradient(&spec, &theta, &data, &applied, cfg.lambda, &cfg.independence).unwrap();
    let g_if = influence_gradient(&spec, &theta, &data, &applied, 0.0, &cfg.independence).unwrap();
    let exact = g_dui == g_if;
    outcome(
        distance <= 1e-6 && exact,
        format!("λ = 0 parameter distance {distance:.1e}, α = 0 gradients identical: {exact}"),
    )
}

const DIGIT_GRID: &str = r#"
seed = 1
repeats = 1
methods = ["retrain", "influence", "dui"]

[dataset]
kind = "digits"
n = 2223
seed = 4

[split]
train_fraction = 0.9
seed = 2

[model]
arch = "mlp"
hidden_dim = 32
l2_reg = 0.001

[train]
learning_rate = 0.5
epochs = 300
tolerance = 1e-6

[request]
strategy = "top_k"
mode = "points"
unlearn_ratios = [0.05, 0.1, 0.2]
feature_ratio = 0.1

[unlearn]
lambda = 0.1
solver = "lissa"
lissa_iterations = 30
lissa_scale = 0.1
damping = 0.01

[unlearn.independence]
batch_size = 256
"#;

fn trend_reproduction() -> Outcome {
    let config = ExperimentConfig::from_toml(DIGIT_GRID).unwrap();
    let n_train = match &config.dataset {
        DatasetSource::Digits { n, .. } => split(*n, &config.split).unwrap().train.len(),
        _ => unreachable!(),
    };
    let report = run_experiment(&config, Path::new("."), 1).unwrap();
    if !report.succeeded() {
        return outcome(false, format!("{} cells failed", report.failures.len()));
    }
    let find = |method: &str, ratio: f64| {
        report
            .aggregates
            .iter()
            .find(|a| a.method == method && a.unlearn_ratio == ratio)
            .expect("aggregate for every cell")
    };
    let (mut fast, mut close_to_if, mut close_to_retrain) = (0, 0, 0);
    let mut cells = Vec::new();
    for &ratio in &config.request.unlearn_ratios {
        let (r, i, d) = (find("retrain", ratio), find("influence", ratio), find("dui", ratio));
        let speed = d.runtime_seconds.mean / r.runtime_seconds.mean;
        fast += usize::from(speed <= 0.5);
        close_to_if += usize::from(d.macro_f1.mean >= i.macro_f1.mean - 0.01);
        close_to_retrain += usize::from(r.macro_f1.mean - d.macro_f1.mean <= 0.05);
        cells.push(format!(
            "{ratio}: rt {speed:.2}×, F1 dui {:.4} / if {:.4} / retrain {:.4}",
            d.macro_f1.mean, i.macro_f1.mean, r.macro_f1.mean
        ));
    }
    outcome(
        fast == 3 && close_to_if >= 2 && close_to_retrain >= 2,
        format!(
            "n_train = {n_train}, runtime ok {fast}/3, F1 vs influence {close_to_if}/3, F1 vs retrain {close_to_retrain}/3 [{}]",
            cells.join("; ")
        ),
    )
}

fn shift_discrimination() -> Outcome {
    let spec = ModelSpec::new("logreg", 4, 2).with_l2(0.1);
    let indep = IndependenceConfig::default();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let data = class_marked(200, 4, seed);
        let theta = trained(&spec, &data, &converge());
        let shift = |request: UnlearnRequest| {
            let applied = apply(&data, &request).unwrap();
            let star = unlearn(&spec, &theta, &data, &applied, &retrain_config("influence")).unwrap();
            shift_report(&spec, &theta, &star.theta_star.values, &data, &applied, &indep)
                .unwrap()
                .hsic_shift
                .abs()
        };
        let top = shift(topk_request(&data, 0.1, 0.25, RequestMode::Points).unwrap());
        let random = shift(random_request(&data, 0.1, RequestMode::Points, seed, 0.25).unwrap());
        wins += usize::from(top > random);
        pairs.push(format!("{top:.2e}/{random:.2e}"));
    }
    outcome(wins >= 4, format!("top-k beats random in {wins}/5 seeds (top/random: {})", pairs.join(", ")))
}

fn determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synth.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut bytes = Vec::new();
    for dir in &dirs {
        let code = run([
            "unlearn",
            "--threads",
            "1",
            "experiment",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        if code != 0 {
            return outcome(false, format!("experiment exited with {code}"));
        }
        bytes.push(std::fs::read(dir.path().join("report.json")).unwrap());
    }
    outcome(bytes[0] == bytes[1], format!("report.json {} bytes, identical: {}", bytes[0].len(), bytes[0] == bytes[1]))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 8] = [
        ("gradient/HVP oracle suite", gradient_suite, 5),
        ("independence suite", independence_suite, 5),
        ("solver equivalence", solver_equivalence, 30),
        ("unlearning fidelity", unlearning_fidelity, 60),
        ("DUI consistency", dui_consistency, 60),
        ("scaled trend reproduction", trend_reproduction, 600),
        ("distribution-shift discrimination", shift_discrimination, 60),
        ("determinism", determinism, 60),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = pass && in_time;
        failed += usize::from(!pass);
        println!(
            "{} {}. {name} ({:.2} s, budget {budget} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
