#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_4, FRAC_PI_6};

use hotspots::geometry::{build_obtuse_triangle, ObtuseTriangleSpec, PolygonalDomain};

pub const A: f64 = -FRAC_PI_6;
pub const B: f64 = FRAC_PI_6;
pub const C: f64 = -FRAC_PI_4;
pub const D: f64 = FRAC_PI_4;

pub fn example_triangle() -> PolygonalDomain {
    build_obtuse_triangle(&ObtuseTriangleSpec { a: A, b: B, base_length: 1.0 }).unwrap()
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 60)
}

/// `1 - exp(-x) - x`, with a series near zero to avoid cancellation.
fn one_minus_exp_minus_linear(x: f64) -> f64 {
    if x < 1e-2 {
        // -x^2/2 + x^3/6 - x^4/24 + x^5/120 - x^6/720
        let mut term = -x * x / 2.0;
        let mut sum = term;
        for k in 3..=8 {
            term *= -x / k as f64;
            sum += term;
        }
        sum
    } else {
        -(-x).exp_m1() - x
    }
}

/// `int_0^inf (1 - e^{-lambda u} - lambda u) c1 u^{-2-beta} du` by quadrature,
/// split at `u = 1`. On `[0, 1]` the substitution `u = s^{1/(1-beta)}` removes
/// the endpoint singularity. On `[1, inf)` the substitution `w = lambda u`
/// gives `lambda^{1+beta} int_lambda^inf (1 - e^{-w} - w) w^{-2-beta} dw`; its
/// `-w` part is integrated exactly and the rest via `w = r^{-1/beta}`.
pub fn stable_tail_quadrature(c1: f64, beta: f64, lambda: f64) -> f64 {
    let k = 1.0 / (1.0 - beta);
    let head = |s: f64| {
        if s == 0.0 {
            return -k * lambda * lambda / 2.0;
        }
        let u = s.powf(k);
        // k s^{k-1} u^{-2-beta} = k u^{-2}
        k * one_minus_exp_minus_linear(lambda * u) / (u * u)
    };
    let near = adaptive_simpson(&head, 0.0, 1.0, 1e-13);

    let linear_part = -lambda.powf(-beta) / beta;
    let r_max = lambda.powf(-beta);
    let rest = |r: f64| {
        if r == 0.0 {
            return 0.0;
        }
        let w = r.powf(-1.0 / beta);
        // dw = (1/beta) r^{-1/beta - 1} dr, so (1 - e^{-w}) w^{-2-beta} dw = (1 - e^{-w}) r^{1/beta} / beta dr
        -(-w).exp_m1() * r.powf(1.0 / beta) / beta
    };
    let far = lambda.powf(1.0 + beta) * (linear_part + adaptive_simpson(&rest, 0.0, r_max, 1e-13));
    c1 * (near + far)
}

pub fn report(id: u32, name: &str, pass: bool, detail: impl AsRef<str>) -> bool {
    println!("criterion {id:>2} [{}] {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    pass
}

/// The flagship scenario (level-5 mesh, `phi = x1`, binary mechanism).
pub fn canonical_scenario() -> serde_json::Value {
    serde_json::json!({
        "seed": 20240601u64,
        "domain": { "a": A, "b": B, "base_length": 1.0 },
        "mechanism": { "a1": 0.0, "b1": 1.0, "nu": { "kind": "none" } },
        "initial_data": { "kind": "x1" },
        "theorem": { "c": C, "d": D },
        "mesh": { "level": 5 },
        "solver": { "dt": 1e-4, "t_end": 0.5, "scheme": "imex" },
        "simulation": {
            "n_particles": 500, "n_replicates": 100, "dt": 1e-4, "t_end": 0.25, "n_outputs": 10,
            "x": { "x1": 0.3, "x2": 0.1 }, "y": { "x1": 0.5, "x2": 0.1 }, "rel_tol": 0.05
        },
        "cone": { "n_lines": 8, "n_samples": 50 }
    })
}

/// Run the binary with `args` on `scenario`, returning the exit code.
pub fn run_cli(dir: &std::path::Path, command: &str, scenario: &serde_json::Value, extra: &[&str]) -> i32 {
    let config = dir.join(format!("{command}_scenario.json"));
    std::fs::write(&config, serde_json::to_string_pretty(scenario).unwrap()).unwrap();
    let out = dir.join("out");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_hotspots"))
        .arg(command)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    status.code().unwrap()
}

pub fn read_report(dir: &std::path::Path, command: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("out").join(format!("{command}_report.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}
