//! Operator surface: config parsing, offline set compilation with
//! caching, simulation runs, verification, and CSV/report emission.
//!
//! Exit codes are a stable scripting contract: 0 success, 2 config
//! error, 3 offline-computation failure, 4 online infeasibility,
//! 5 verification failure.

use crate::contour::Tolerance;
use crate::gantry::{
    prepare_offline, simulate, GantryParams, PathSegment, Tuning,
};
use crate::invariance::{verify_family, SwitchCiFamily};
use crate::{Error, Result, Vector};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "CONTOUR_MPC_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "contour-mpc", about = "Contouring-error-bounded MPC for switched gantries")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Compile the feasible sets and the switch CI family.
    Sets { config: PathBuf },
    /// Run the closed-loop simulation (compiles sets unless --sets is given).
    Simulate {
        config: PathBuf,
        /// Directory holding previously compiled sets.
        #[arg(long)]
        sets: Option<PathBuf>,
    },
    /// Re-certify a compiled sets directory.
    Verify {
        setsdir: PathBuf,
        /// Invariance feasibility samples per mode (0 = inclusion checks only).
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Full run description loaded from a config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: GantryParams,
    pub path: Vec<PathSegment>,
    pub tol: Tolerance,
    pub tuning: Tuning,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub x0: Option<Vector>,
    /// Raw config text, copied into the sets directory for later
    /// re-verification.
    pub raw: String,
}

fn parse_floats(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = v
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: bad number `{t}`")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::Config(format!("{key}: expected {n} values, got {}", vals.len())));
    }
    Ok(vals)
}

fn parse_one(key: &str, v: &str) -> Result<f64> {
    Ok(parse_floats(key, v, 1)?[0])
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: bad integer `{v}`")))
}

/// Parses the flat `key = value` config format with `[section]`
/// headers. Unknown sections and keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut params = GantryParams::default();
    let mut tuning = Tuning::default();
    let mut eps_c = 0.004;
    let mut output_dir = PathBuf::from("out");
    let mut seed = 0u64;
    let mut x0 = None;
    let mut preset: Option<String> = None;
    let mut segments: Vec<(usize, Vec<f64>, String)> = Vec::new();
    let mut section = String::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            match section.as_str() {
                "plant" | "path" | "tolerance" | "mpc" | "run" => {}
                other => return Err(Error::Config(format!("unknown section [{other}]"))),
            }
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim();
        let val = val.trim();
        match (section.as_str(), key) {
            ("plant", "t_s") => params.t_s = parse_one(key, val)?,
            ("plant", "travel") => {
                let v = parse_floats(key, val, 2)?;
                params.travel = (v[0], v[1]);
            }
            ("plant", "boundaries") => {
                let v = parse_floats(key, val, 4)?;
                params.boundaries = [v[0], v[1], v[2], v[3]];
            }
            ("plant", "lin_points") => {
                let v = parse_floats(key, val, 5)?;
                params.lin_points = [v[0], v[1], v[2], v[3], v[4]];
            }
            ("plant", "omega") => {
                let v = parse_floats(key, val, 5)?;
                params.omega = [v[0], v[1], v[2], v[3], v[4]];
            }
            ("plant", "zeta") => params.zeta = parse_one(key, val)?,
            ("plant", "k1") => params.k1 = parse_one(key, val)?,
            ("plant", "k2") => params.k2 = parse_one(key, val)?,
            ("plant", "k3") => params.k3 = parse_one(key, val)?,
            ("plant", "u_max") => params.u_max = parse_one(key, val)?,
            ("plant", "v_max_state") => params.v_max_state = parse_one(key, val)?,
            ("plant", "y_max_state") => params.y_max_state = parse_one(key, val)?,
            ("plant", "theta_max") => params.theta_max = parse_one(key, val)?,
            ("plant", "theta_dot_max") => params.theta_dot_max = parse_one(key, val)?,
            ("tolerance", "eps_c") => eps_c = parse_one(key, val)?,
            ("path", "preset") => preset = Some(val.to_string()),
            ("path", k) if k.starts_with("segment") => {
                let idx: usize = k["segment".len()..]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad segment key `{k}`")))?;
                let mut parts = val.split_whitespace();
                let kind = parts
                    .next()
                    .ok_or_else(|| Error::Config(format!("{k}: empty segment")))?
                    .to_string();
                let nums: Vec<f64> = parts
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::Config(format!("{k}: bad number `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                segments.push((idx, nums, kind));
            }
            ("mpc", "horizon") => tuning.horizon = parse_usize(key, val)?,
            ("mpc", "q") => {
                let v = parse_floats(key, val, 2)?;
                tuning.q = (v[0], v[1]);
            }
            ("mpc", "r") => {
                let v = parse_floats(key, val, 3)?;
                tuning.r = (v[0], v[1], v[2]);
            }
            ("mpc", "v_max") => tuning.v_max = parse_one(key, val)?,
            ("mpc", "a_max") => tuning.a_max = parse_one(key, val)?,
            ("mpc", "dwell_margin") => tuning.dwell_margin = parse_usize(key, val)?,
            ("mpc", "side_count_slack") => tuning.side_count_slack = parse_one(key, val)?,
            ("mpc", "settle_tol") => tuning.settle_tol = parse_one(key, val)?,
            ("mpc", "settle_cap") => tuning.settle_cap = parse_usize(key, val)?,
            ("mpc", "max_iter") => tuning.max_iter = parse_usize(key, val)?,
            ("run", "output_dir") => output_dir = PathBuf::from(val),
            ("run", "seed") => {
                seed = val
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: bad integer `{val}`")))?
            }
            ("run", "x0") => x0 = Some(Vector::from_vec(parse_floats(key, val, 6)?)),
            (s, k) => {
                return Err(Error::Config(if s.is_empty() {
                    format!("key `{k}` appears before any [section] header")
                } else {
                    format!("unknown key `{k}` in section [{s}]")
                }))
            }
        }
    }
    params.validate().map_err(|e| Error::Config(e.to_string()))?;
    let tol = Tolerance::new(eps_c).map_err(|e| Error::Config(e.to_string()))?;
    let path = build_path(preset.as_deref(), segments)?;
    for seg in &path {
        if let PathSegment::Arc { r, .. } = seg {
            if eps_c >= *r {
                return Err(Error::Config(
                    "contouring tolerance must be smaller than the arc radius".into(),
                ));
            }
        }
    }
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        output_dir = PathBuf::from(dir);
    }
    Ok(RunConfig {
        params,
        path,
        tol,
        tuning,
        output_dir,
        seed,
        x0,
        raw: text.to_string(),
    })
}

fn build_path(
    preset: Option<&str>,
    mut segments: Vec<(usize, Vec<f64>, String)>,
) -> Result<Vec<PathSegment>> {
    match (preset, segments.is_empty()) {
        (Some("line_circle_line"), true) => Ok(crate::gantry::reference_path()),
        (Some(p), true) => Err(Error::Config(format!("unknown path preset `{p}`"))),
        (Some(_), false) => Err(Error::Config(
            "give either a path preset or explicit segments, not both".into(),
        )),
        (None, true) => Ok(crate::gantry::reference_path()),
        (None, false) => {
            segments.sort_by_key(|(i, _, _)| *i);
            segments
                .iter()
                .map(|(i, nums, kind)| match (kind.as_str(), nums.len()) {
                    ("line", 4) => Ok(PathSegment::Line {
                        from: (nums[0], nums[1]),
                        to: (nums[2], nums[3]),
                    }),
                    ("arc", 5) => Ok(PathSegment::Arc {
                        center: (nums[0], nums[1]),
                        r: nums[2],
                        start_angle: nums[3],
                        end_angle: nums[4],
                    }),
                    _ => Err(Error::Config(format!(
                        "segment{i}: expected `line x0 y0 x1 y1` or `arc cx cy r a0 a1`"
                    ))),
                })
                .collect()
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Maps an offline-stage error to the exit-code contract.
fn offline_exit(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) => 2,
        _ => 3,
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn sets_summary(art: &crate::gantry::OfflineArtifacts) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    if let Some((n_i, n_o)) = art.side_counts {
        let _ = writeln!(s, "n_inner = {n_i}");
        let _ = writeln!(s, "n_outer = {n_o}");
    }
    let _ = writeln!(s, "modes = {}", art.composite.len());
    let _ = writeln!(s, "iterations = {}", art.family.iterations_used);
    let _ = writeln!(s, "converged = {}", art.family.converged);
    for (m, cm) in art.composite.iter().zip(&art.plan.mode_sequence) {
        let c = art.family.sets.get(&m.mode_id).map(|p| p.num_rows()).unwrap_or(0);
        let _ = writeln!(
            s,
            "mode {} region {} s_facets {} c_facets {}",
            m.mode_id, cm.region, m.s.num_rows(), c
        );
    }
    s
}

/// Writes a compiled sets directory (family, feasible sets, annulus,
/// summary, and the originating config) under `dir`.
pub fn write_sets_dir(
    art: &crate::gantry::OfflineArtifacts,
    raw_config: &str,
    dir: &Path,
) -> Result<()> {
    write_file(&dir.join("family.txt"), &art.family.to_text())?;
    let mut feas = String::new();
    for m in &art.composite {
        use std::fmt::Write as _;
        let _ = writeln!(feas, "mode {}", m.mode_id);
        feas.push_str(&m.s.to_text());
    }
    write_file(&dir.join("feasible_sets.txt"), &feas)?;
    if let Some(a) = &art.annulus {
        write_file(&dir.join("annulus.txt"), &a.to_text())?;
    }
    write_file(&dir.join("summary.txt"), &sets_summary(art))?;
    write_file(&dir.join("config.txt"), raw_config)?;
    Ok(())
}

fn compile_and_write_sets(cfg: &RunConfig) -> Result<PathBuf> {
    let art = prepare_offline(&cfg.params, &cfg.path, cfg.tol, &cfg.tuning)?
        .solve_family(cfg.tuning.max_iter)?;
    let dir = cfg.output_dir.join("sets");
    write_sets_dir(&art, &cfg.raw, &dir)?;
    Ok(dir)
}

pub fn cmd_sets(config_path: &Path) -> i32 {
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    match compile_and_write_sets(&cfg) {
        Ok(dir) => {
            println!("sets written to {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("{e}");
            offline_exit(&e)
        }
    }
}

fn simulate_summary(tr: &crate::gantry::Trace, eps_c: f64) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "samples = {}", tr.records.len());
    let _ = writeln!(s, "max_eps = {:.6e}", tr.summary.max_eps);
    let _ = writeln!(s, "max_track_x = {:.6e}", tr.summary.max_track.0);
    let _ = writeln!(s, "max_track_y = {:.6e}", tr.summary.max_track.1);
    let _ = writeln!(s, "switch_count = {}", tr.summary.switch_count);
    let _ = writeln!(s, "infeasibility_count = {}", tr.summary.infeasibility_count);
    let _ = writeln!(s, "eps_c = {:.6e}", eps_c);
    let _ = writeln!(
        s,
        "within_tolerance = {}",
        tr.summary.max_eps <= eps_c && tr.summary.infeasibility_count == 0
    );
    s
}

pub fn cmd_simulate(config_path: &Path, sets: Option<&Path>) -> i32 {
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let prep = match prepare_offline(&cfg.params, &cfg.path, cfg.tol, &cfg.tuning) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return offline_exit(&e);
        }
    };
    let art = match sets {
        Some(dir) => {
            let text = match std::fs::read_to_string(dir.join("family.txt")) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read cached sets in {}: {e}", dir.display());
                    return 2;
                }
            };
            let family = match SwitchCiFamily::from_text(&text) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("{e}");
                    return 2;
                }
            };
            match prep.with_family(family) {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("{e}");
                    return 2;
                }
            }
        }
        None => match prep.solve_family(cfg.tuning.max_iter) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("{e}");
                return offline_exit(&e);
            }
        },
    };
    match simulate(&cfg.params, &art, &cfg.tuning, cfg.x0.clone()) {
        Ok(tr) => {
            let csv = tr.to_csv();
            let summary = simulate_summary(&tr, cfg.tol.eps_c);
            if let Err(e) = write_file(&cfg.output_dir.join("trace.csv"), &csv)
                .and_then(|_| write_file(&cfg.output_dir.join("summary.txt"), &summary))
            {
                eprintln!("{e}");
                return 3;
            }
            print!("{summary}");
            if tr.summary.infeasibility_count == 0 && tr.summary.max_eps <= cfg.tol.eps_c {
                0
            } else {
                eprintln!(
                    "contouring tolerance exceeded: max eps {:.6e} > {:.6e}",
                    tr.summary.max_eps, cfg.tol.eps_c
                );
                4
            }
        }
        Err(e @ Error::MpcInfeasible { .. }) => {
            eprintln!("{e}");
            4
        }
        Err(e) => {
            eprintln!("{e}");
            3
        }
    }
}

pub fn cmd_verify(setsdir: &Path, samples: usize, seed: u64) -> i32 {
    let cfg = match load_config(&setsdir.join("config.txt")) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let prep = match prepare_offline(&cfg.params, &cfg.path, cfg.tol, &cfg.tuning) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return offline_exit(&e);
        }
    };
    let family_text = match std::fs::read_to_string(setsdir.join("family.txt")) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", setsdir.join("family.txt").display());
            return 2;
        }
    };
    let family = match SwitchCiFamily::from_text(&family_text) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let op = match prep.reach_op() {
        Ok(op) => op,
        Err(e) => {
            eprintln!("{e}");
            return 3;
        }
    };
    let mut violations = 0usize;
    match verify_family(
        &family,
        &prep.composite,
        &prep.graph,
        &prep.cfg.u_set,
        samples,
        seed,
        &op,
    ) {
        Ok(report) => {
            for v in &report.violations {
                eprintln!("{v}");
                violations += 1;
            }
            println!(
                "family: {} violations, {} samples per mode, {} edges checked",
                report.violations.len(),
                report.invariance_samples_per_mode,
                report.edges_checked
            );
        }
        Err(e) => {
            eprintln!("{e}");
            return 3;
        }
    }
    if let Some(ann) = &prep.annulus {
        match annulus_check(ann, samples.max(1) * 10, seed) {
            Ok(n) => {
                violations += n;
                println!("annulus: {n} violations");
            }
            Err(e) => {
                eprintln!("{e}");
                return 3;
            }
        }
    }
    if violations == 0 {
        println!("verification passed");
        0
    } else {
        eprintln!("verification failed with {violations} violations");
        5
    }
}

/// Annulus soundness and coverage sampler: every sampled sector point
/// must lie within eps_c of the circle, and a dense set of circle
/// points must be covered by the sector union.
fn annulus_check(ann: &crate::contour::AnnulusApprox, n_samples: usize, seed: u64) -> Result<usize> {
    let mut bad = 0usize;
    let per_sector = n_samples.div_ceil(ann.sectors.len());
    for (i, sector) in ann.sectors.iter().enumerate() {
        for pt in sector.sample_uniform(per_sector, seed ^ (i as u64) << 8)? {
            let d = ((pt[0] - ann.center.0).powi(2) + (pt[1] - ann.center.1).powi(2)).sqrt();
            if (ann.r_c - d).abs() > ann.eps_c + 1e-9 {
                eprintln!(
                    "annulus sector {i}: point ({:.6e}, {:.6e}) is {:.3e} from the circle",
                    pt[0],
                    pt[1],
                    (ann.r_c - d).abs()
                );
                bad += 1;
            }
        }
    }
    for k in 0..720 {
        let ang = k as f64 / 720.0 * std::f64::consts::TAU;
        let (x, y) = (
            ann.center.0 + ann.r_c * ang.cos(),
            ann.center.1 + ann.r_c * ang.sin(),
        );
        if ann.active_sector(x, y).is_err() {
            eprintln!("annulus coverage: circle point at angle {ang:.4} rad uncovered");
            bad += 1;
        }
    }
    Ok(bad)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match cli.cmd {
        Cmd::Sets { config } => cmd_sets(&config),
        Cmd::Simulate { config, sets } => cmd_simulate(&config, sets.as_deref()),
        Cmd::Verify { setsdir, samples, seed } => cmd_verify(&setsdir, samples, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[tolerance]
eps_c = 0.004
[mpc]
horizon = 3
[run]
seed = 7
";

    #[test]
    fn parses_minimal_config() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.tuning.horizon, 3);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.path.len(), 3);
        assert!((cfg.tol.eps_c - 0.004).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_key() {
        let bad = "[mpc]\nhorizn = 3\n";
        let err = parse_config(bad).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("horizn"));
    }

    #[test]
    fn rejects_key_outside_section() {
        let err = parse_config("eps_c = 0.004\n").unwrap_err();
        assert!(err.to_string().contains("before any"));
    }

    #[test]
    fn rejects_tolerance_at_least_radius() {
        let bad = "[tolerance]\neps_c = 0.09\n";
        let err = parse_config(bad).unwrap_err();
        assert!(err.to_string().contains("smaller than the arc radius"));
    }

    #[test]
    fn explicit_segments_build_a_path() {
        let text = "\
[path]
segment1 = line -0.12 0 -0.08 0
segment2 = arc 0 0 0.08 3.14159265358979 9.42477796076938
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.path.len(), 2);
        assert!(matches!(cfg.path[1], PathSegment::Arc { .. }));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# header\n\n[run]\nseed = 3 # trailing\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.seed, 3);
    }
}
