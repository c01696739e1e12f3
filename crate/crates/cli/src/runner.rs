//! Experiment dispatch: build core inputs from a validated configuration,
//! run the selected check, and package the CSV report, the summary text,
//! a plot description, and the verdict.

use lapdual::config::{flow_exponent, ExperimentConfig, ExperimentKind, GridConfig};
use lapdual::duality::{cm_check, duality_gap, generator_fd_check, mc_laplace, SideValue};
use lapdual::flows::{cb_flow, flow_semigroup_gap, DEFAULT_FLOW_TOL};
use lapdual::paths::{ProcessSpec, SimConfig};
use lapdual::symbols::{
    check_negative_part_bound, dual_symbol, eval_lds, ConventionPair, InfZeroConvention,
    LdsSymbol, ZeroInfConvention,
};
use lapdual::{Error, Result};

use crate::plot::PlotSpec;

const DEFAULT_MAX_ABS_Z: f64 = 3.0;
const DEFAULT_EXACT_GAP: f64 = 1e-9;
const DEFAULT_SYMBOL_DEFECT: f64 = 1e-12;
const DEFAULT_FD_GAP: f64 = 1e-3;
const DEFAULT_FLOW_GAP: f64 = 1e-8;
const DEFAULT_NOISE_SCALE: f64 = 3.0;
const DEFAULT_MAX_NEGATIVE_PART: f64 = 1e-10;
const DEFAULT_CM_ORDER: usize = 4;
const DEFAULT_GRID_CAP: f64 = 10.0;
const DEFAULT_GRID_N: usize = 101;

#[derive(Debug)]
pub struct RunOutput {
    pub passed: bool,
    pub csv: String,
    pub summary: String,
    pub plot: PlotSpec,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Duality => run_duality(cfg),
        ExperimentKind::Cm => run_cm(cfg),
        ExperimentKind::GeneratorFd => run_generator_fd(cfg),
        ExperimentKind::Flow => run_flow(cfg),
        ExperimentKind::SymbolCheck => run_symbol_check(cfg),
        ExperimentKind::NegativePart => run_negative_part(cfg),
    }
}

fn process_x(cfg: &ExperimentConfig) -> Result<ProcessSpec> {
    cfg.process
        .as_ref()
        .and_then(|t| t.x.as_ref())
        .map(|c| c.build())
        .ok_or_else(|| Error::Validation("process.x: required for this experiment".into()))
}

fn process_y(cfg: &ExperimentConfig) -> Result<ProcessSpec> {
    cfg.process
        .as_ref()
        .and_then(|t| t.y.as_ref())
        .map(|c| c.build())
        .ok_or_else(|| Error::Validation("process.y: required for this experiment".into()))
}

fn symbol(cfg: &ExperimentConfig) -> Result<LdsSymbol> {
    cfg.symbol
        .as_ref()
        .map(|s| s.build())
        .ok_or_else(|| Error::Validation("symbol: required for this experiment".into()))
}

/// The simulation horizon: largest finite time the experiment reaches,
/// floored at two steps so the configuration stays valid when every time
/// is tiny (per-cell runs clamp to the cell's own horizon anyway).
fn sim_config(cfg: &ExperimentConfig, times: &[f64]) -> Result<SimConfig> {
    let sim = cfg
        .sim
        .as_ref()
        .ok_or_else(|| Error::Validation("sim: required for this experiment".into()))?;
    let horizon = times
        .iter()
        .copied()
        .filter(|t| t.is_finite())
        .fold(0.0f64, f64::max)
        .max(2.0 * sim.step);
    Ok(sim.build(horizon))
}

fn cross_grid(grid: &GridConfig) -> Vec<(f64, f64, f64)> {
    let mut cells = Vec::with_capacity(grid.x.len() * grid.y.len() * grid.t.len());
    for &x in &grid.x {
        for &y in &grid.y {
            for &t in &grid.t {
                cells.push((x, y, t));
            }
        }
    }
    cells
}

/// `max` that keeps NaN sticky instead of silently dropping it, so a
/// poisoned statistic fails its gate.
fn running_max(current: f64, candidate: f64) -> f64 {
    if current.is_nan() || candidate.is_nan() {
        f64::NAN
    } else {
        current.max(candidate)
    }
}

fn convention_tokens(conv: ConventionPair) -> (&'static str, &'static str) {
    let zero_inf = match conv.zero_inf {
        ZeroInfConvention::ZeroPlusInf => "0+inf",
        ZeroInfConvention::ZeroInfMinus => "0inf-",
    };
    let inf_zero = match conv.inf_zero {
        InfZeroConvention::InfZeroPlus => "inf0+",
        InfZeroConvention::InfMinusZero => "inf-0",
    };
    (zero_inf, inf_zero)
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

struct Summary(String);

impl Summary {
    fn new(cfg: &ExperimentConfig, experiment: &str) -> Self {
        let mut s = Summary(String::new());
        s.line("name", &cfg.name);
        s.line("experiment", experiment);
        s
    }

    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        self.0.push_str(&format!("{key} = {value}\n"));
    }

    fn finish(mut self, passed: bool) -> String {
        self.line("verdict", verdict(passed));
        self.0
    }
}

fn run_duality(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let spec_x = process_x(cfg)?;
    let spec_y = process_y(cfg)?;
    let grid = cross_grid(&cfg.grid);
    let sim = sim_config(cfg, &cfg.grid.t)?;
    let flags = cfg.analytic_flags();
    let report =
        duality_gap(&spec_x, &spec_y, &grid, &sim, cfg.convention_pair(), flags.x, flags.y)?;

    let gates = cfg.gates();
    let max_z = gates.max_abs_z.unwrap_or(DEFAULT_MAX_ABS_Z);
    let max_gap = gates.max_abs_gap.unwrap_or(DEFAULT_EXACT_GAP);

    let mut sampled = 0usize;
    let mut exact = 0usize;
    let mut worst_z = 0.0f64;
    let mut worst_exact_gap = 0.0f64;
    let mut max_frac_inf = 0.0f64;
    for row in &report.rows {
        if row.left.stderr() > 0.0 || row.right.stderr() > 0.0 {
            sampled += 1;
            worst_z = running_max(worst_z, row.z.abs());
        } else {
            exact += 1;
            worst_exact_gap = running_max(worst_exact_gap, row.gap.abs());
        }
        for side in [&row.left, &row.right] {
            if let SideValue::Estimated(e) = side {
                max_frac_inf = running_max(max_frac_inf, e.frac_inf);
            }
        }
    }
    let mut passed = worst_z <= max_z && worst_exact_gap <= max_gap;
    if let Some(cap) = gates.max_exploded {
        passed = passed && max_frac_inf <= cap;
    }

    let (zero_inf, inf_zero) = convention_tokens(report.convention);
    let mut summary = Summary::new(cfg, "duality");
    summary.line("convention", format!("{zero_inf} {inf_zero}"));
    summary.line("rows", report.rows.len());
    summary.line("sampled_rows", sampled);
    summary.line("exact_rows", exact);
    summary.line("worst_abs_z", worst_z);
    summary.line("worst_exact_gap", worst_exact_gap);
    summary.line("max_frac_inf", max_frac_inf);

    let plot = PlotSpec {
        title: format!("{}: z by grid cell", cfg.name),
        x_label: "cell index".into(),
        y_label: "z".into(),
        points: report.rows.iter().enumerate().map(|(i, r)| (i as f64, r.z)).collect(),
        band: Some(max_z),
    };
    Ok(RunOutput { passed, csv: report.to_csv(), summary: summary.finish(passed), plot })
}

fn run_cm(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let spec = process_x(cfg)?;
    let y = cfg.grid.y[0];
    let t = cfg.grid.t[0];
    let sim = sim_config(cfg, &cfg.grid.t)?;
    let conv = cfg.convention_pair();
    let order = cfg.order.unwrap_or(DEFAULT_CM_ORDER);

    let mut csv = String::from("x,mean,se\n");
    let mut samples = Vec::with_capacity(cfg.grid.x.len());
    let mut max_se = 0.0f64;
    for &x in &cfg.grid.x {
        let est = mc_laplace(&spec, x, y, t, &sim, conv)?;
        csv.push_str(&format!("{},{},{}\n", x, est.mean, est.stderr));
        samples.push((x, est.mean));
        max_se = running_max(max_se, est.stderr);
    }
    let noise = cfg.gates().noise_scale.unwrap_or(DEFAULT_NOISE_SCALE) * max_se;
    let report = cm_check(&samples, order, noise)?;
    let passed = report.passed;

    let mut summary = Summary::new(cfg, "cm");
    summary.line("order", order);
    summary.line("noise", noise);
    summary.line("samples", samples.len());
    match &report.first_violation {
        None => summary.line("first_violation", "none"),
        Some(v) => summary.line(
            "first_violation",
            format!(
                "order={} index={} value={} tolerance={}",
                v.order, v.index, v.signed_difference, v.tolerance
            ),
        ),
    }

    let plot = PlotSpec {
        title: format!("{}: transform samples", cfg.name),
        x_label: "x".into(),
        y_label: "mean".into(),
        points: samples,
        band: None,
    };
    Ok(RunOutput { passed, csv, summary: summary.finish(passed), plot })
}

fn run_generator_fd(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let spec = process_x(cfg)?;
    let sym = symbol(cfg)?;
    let x = cfg.grid.x[0];
    let y = cfg.grid.y[0];
    let sim = sim_config(cfg, &cfg.offsets)?;
    let rows = generator_fd_check(&sym, &spec, x, y, &cfg.offsets, &sim, cfg.convention_pair())?;

    let smallest = rows
        .iter()
        .min_by(|a, b| a.h.total_cmp(&b.h))
        .ok_or_else(|| Error::Validation("offsets: must be nonempty".into()))?;
    let gate = cfg.gates().fd_gap.unwrap_or(DEFAULT_FD_GAP);
    let passed = smallest.gap <= gate;

    let mut csv = String::from("h,fd,symbol,gap\n");
    for row in &rows {
        csv.push_str(&format!("{},{},{},{}\n", row.h, row.fd, row.symbol, row.gap));
    }

    let mut summary = Summary::new(cfg, "generator_fd");
    summary.line("x", x);
    summary.line("y", y);
    summary.line("symbol_action", smallest.symbol);
    summary.line("smallest_offset", smallest.h);
    summary.line("gap_at_smallest_offset", smallest.gap);

    let plot = PlotSpec {
        title: format!("{}: derivative gap by offset", cfg.name),
        x_label: "h".into(),
        y_label: "gap".into(),
        points: rows.iter().map(|r| (r.h, r.gap)).collect(),
        band: Some(gate),
    };
    Ok(RunOutput { passed, csv, summary: summary.finish(passed), plot })
}

fn run_flow(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let psi_cfg = cfg
        .process
        .as_ref()
        .and_then(|t| t.x.as_ref())
        .and_then(flow_exponent)
        .ok_or_else(|| {
            Error::Validation(
                "process.x: flow experiments need a kind with a branching exponent".into(),
            )
        })?;
    let psi = psi_cfg.build();

    let mut csv = String::from("y,t,u,gap\n");
    let mut points = Vec::new();
    let mut worst = 0.0f64;
    for &y in &cfg.grid.y {
        for &t in &cfg.grid.t {
            let gap = flow_semigroup_gap(&psi, y, t / 2.0, t / 2.0)?;
            let u = cb_flow(&psi, y, t, DEFAULT_FLOW_TOL)?.u;
            csv.push_str(&format!("{y},{t},{u},{gap}\n"));
            points.push((points.len() as f64, gap));
            worst = running_max(worst, gap);
        }
    }
    let gate = cfg.gates().flow_gap.unwrap_or(DEFAULT_FLOW_GAP);
    let passed = worst <= gate;

    let mut summary = Summary::new(cfg, "flow");
    summary.line("cases", points.len());
    summary.line("worst_gap", worst);

    let plot = PlotSpec {
        title: format!("{}: composition defect by case", cfg.name),
        x_label: "case index".into(),
        y_label: "gap".into(),
        points,
        band: Some(gate),
    };
    Ok(RunOutput { passed, csv, summary: summary.finish(passed), plot })
}

fn run_symbol_check(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let s = symbol(cfg)?;
    s.validate()?;
    let dual = dual_symbol(&s);

    let mut csv = String::from("x,y,forward,transposed,defect\n");
    let mut points = Vec::new();
    let mut worst = 0.0f64;
    for &x in &cfg.grid.x {
        for &y in &cfg.grid.y {
            let forward = eval_lds(&s, x, y)?;
            let transposed = eval_lds(&dual, y, x)?;
            let defect = (forward - transposed).abs();
            csv.push_str(&format!("{x},{y},{forward},{transposed},{defect}\n"));
            points.push((points.len() as f64, defect));
            worst = running_max(worst, defect);
        }
    }
    let gate = cfg.gates().max_abs_gap.unwrap_or(DEFAULT_SYMBOL_DEFECT);
    let passed = worst <= gate;

    let mut summary = Summary::new(cfg, "symbol_check");
    summary.line("grid_points", points.len());
    summary.line("worst_defect", worst);

    let plot = PlotSpec {
        title: format!("{}: transposition defect", cfg.name),
        x_label: "point index".into(),
        y_label: "defect".into(),
        points,
        band: Some(gate),
    };
    Ok(RunOutput { passed, csv, summary: summary.finish(passed), plot })
}

fn run_negative_part(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let s = symbol(cfg)?;
    let cap = cfg.grid_cap.unwrap_or(DEFAULT_GRID_CAP);
    let n = cfg.grid_n.unwrap_or(DEFAULT_GRID_N);
    let (sup, hypotheses_hold) = check_negative_part_bound(&s, cap, n)?;
    let gate = cfg.gates().max_negative_part.unwrap_or(DEFAULT_MAX_NEGATIVE_PART);
    let passed = hypotheses_hold && sup <= gate;

    let csv = format!(
        "grid_cap,grid_n,sup_negative_part,hypotheses_hold\n{cap},{n},{sup},{hypotheses_hold}\n"
    );

    let mut summary = Summary::new(cfg, "negative_part");
    summary.line("grid_cap", cap);
    summary.line("grid_n", n);
    summary.line("sup_negative_part", sup);
    summary.line("hypotheses_hold", hypotheses_hold);

    let plot = PlotSpec {
        title: format!("{}: negative part", cfg.name),
        x_label: "grid cap".into(),
        y_label: "sup".into(),
        points: vec![(cap, sup)],
        band: Some(gate),
    };
    Ok(RunOutput { passed, csv, summary: summary.finish(passed), plot })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ExperimentConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn symbol_check_reports_zero_defect_for_a_symmetric_symbol() {
        let cfg = parse(
            r#"
            name = "probe"
            experiment = "symbol_check"
            output = "out/probe"
            [symbol.psi]
            a = 1.0
            [symbol.psi_hat]
            a = 1.0
            [grid]
            x = [0.0, 1.0, 2.0]
            y = [0.0, 1.0, 2.0]
            "#,
        );
        let out = execute(&cfg).unwrap();
        assert!(out.passed);
        assert!(out.summary.contains("worst_defect = 0\n"));
        assert_eq!(out.csv.lines().count(), 10);
    }

    #[test]
    fn flow_gate_failure_flips_the_verdict_not_the_report() {
        let mut cfg = parse(
            r#"
            name = "probe"
            experiment = "flow"
            output = "out/probe"
            [process.x]
            kind = "cb"
            [process.x.psi]
            a = 1.0
            [grid]
            y = [1.0]
            t = [1.0]
            "#,
        );
        let out = execute(&cfg).unwrap();
        assert!(out.passed);

        cfg.gates = Some(lapdual::config::GatesTable {
            flow_gap: Some(0.0),
            ..Default::default()
        });
        let out = execute(&cfg).unwrap();
        assert!(!out.passed);
        assert!(out.summary.ends_with("verdict = FAIL\n"));
    }

    #[test]
    fn duality_summary_separates_sampled_and_exact_rows() {
        let cfg = parse(
            r#"
            name = "probe"
            experiment = "duality"
            output = "out/probe"
            [process.x]
            kind = "subordinator"
            [process.x.phi]
            d = 1.0
            [process.y]
            kind = "killed_constant"
            [process.y.phi]
            d = 1.0
            [grid]
            x = [1.0]
            y = [1.0]
            t = [0.5]
            [sim]
            step = 0.01
            paths = 500
            seed = 5
            [analytic]
            x = true
            y = true
            "#,
        );
        let out = execute(&cfg).unwrap();
        assert!(out.passed);
        assert!(out.summary.contains("sampled_rows = 0\n"));
        assert!(out.summary.contains("exact_rows = 1\n"));
        assert!(out.summary.contains("worst_exact_gap = 0\n"));
    }

    #[test]
    fn missing_required_table_is_a_validation_error() {
        let cfg = parse(
            r#"
            name = "probe"
            experiment = "negative_part"
            output = "out/probe"
            "#,
        );
        let err = execute(&cfg).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "got {err}");
        assert!(err.to_string().contains("symbol"));
    }

    #[test]
    fn nan_stays_sticky_in_the_running_max() {
        assert_eq!(running_max(1.0, 2.0), 2.0);
        assert!(running_max(f64::NAN, 0.0).is_nan());
        assert!(running_max(0.0, f64::NAN).is_nan());
    }
}
