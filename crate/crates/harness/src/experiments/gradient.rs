//! Gradient estimation: spatial derivatives of the risk probability from
//! finite differences of the predicted grid, compared against the analytic
//! oracle gradient and against finite differences of the raw Monte Carlo
//! data. Reuses the trained generalization model.

use pipe_core::montecarlo::finite_diff_gradient;
use pipe_core::training::{predict_grid, predict_gradient_grid};

use super::generalization::{self, Artifacts, Config};
use crate::metrics::mae;
use crate::oracle::{oracle_gradient_grid, oracle_grid};
use crate::report::{write_plot_csv, MetricsReport};
use crate::{HarnessError, RunContext};

/// Gradient rows and checks for an already trained model.
pub fn evaluate(
    cfg: &Config,
    artifacts: &Artifacts,
    ctx: &RunContext,
) -> Result<MetricsReport, HarnessError> {
    let mut report = MetricsReport::default();
    report.config_lines = cfg.lines();
    report.config_lines[0].1 = "gradient".to_string();
    let spec = &artifacts.spec;
    let eval_spec = &artifacts.eval_spec;
    let truth_grad = oracle_gradient_grid(eval_spec)?;

    // Method floor: central differences of the oracle grid itself.
    let oracle_values = oracle_grid(eval_spec)?;
    let oracle_fd = finite_diff_gradient(&oracle_values, 0)?;
    let (oracle_fd_mae, _) =
        mae(eval_spec, &oracle_fd.values, &truth_grad.values, &spec.safe_set, None);
    report.push_row("oracle-fd", "full", 0, 1.0, "gradient_mae", oracle_fd_mae);
    let dx = eval_spec.state_spacing(0);
    report.push_check(
        "oracle finite-difference self-check is O(dx^2)",
        oracle_fd_mae <= 4.0 * dx * dx,
        format!("mae = {oracle_fd_mae:.3e} at dx = {dx}"),
    );

    // Finite differences of the predicted grid (the reporting route).
    let pipe_grid = predict_grid(&artifacts.params, eval_spec, spec.mode())?;
    let pipe_fd = finite_diff_gradient(&pipe_grid, 0)?;
    let (pipe_fd_mae, cells) =
        mae(eval_spec, &pipe_fd.values, &truth_grad.values, &spec.safe_set, None);
    report.push_row("pipe-fd", "full", cfg.mc_n, 1.0, "gradient_mae", pipe_fd_mae);

    // Diagnostic: the exact network derivative from the jet.
    let pipe_jet = predict_gradient_grid(&artifacts.params, eval_spec, 0)?;
    let (pipe_jet_mae, _) =
        mae(eval_spec, &pipe_jet.values, &truth_grad.values, &spec.safe_set, None);
    report.push_row("pipe-jet", "full", cfg.mc_n, 1.0, "gradient_mae", pipe_jet_mae);

    // Finite differences of the Monte Carlo training grid, on its own
    // (coarser) lattice over the data sub-region.
    let mc_fd = finite_diff_gradient(&artifacts.dataset, 0)?;
    let data_spec = &artifacts.dataset.spec;
    let mc_truth = oracle_gradient_grid(data_spec)?;
    let (mc_fd_mae, _) =
        mae(data_spec, &mc_fd.values, &mc_truth.values, &spec.safe_set, None);
    report.push_row("mc-fd", "data", cfg.mc_n, 1.0, "gradient_mae", mc_fd_mae);

    report.push_check(
        "pipe gradient mae <= 0.5e-2",
        pipe_fd_mae <= 5e-3,
        format!("mae = {pipe_fd_mae:.4e} over {cells} cells"),
    );
    report.push_check(
        "mc gradient mae >= 1e-2",
        mc_fd_mae >= 1e-2,
        format!("mae = {mc_fd_mae:.4e}"),
    );
    report.push_check(
        "pipe gradient mae <= 1/4 of mc",
        pipe_fd_mae <= 0.25 * mc_fd_mae,
        format!("ratio = {:.2}", mc_fd_mae / pipe_fd_mae),
    );

    if ctx.plot_data {
        let spec_ref = eval_spec.clone();
        let truth = truth_grad.values.clone();
        let pipe = pipe_fd.values.clone();
        let rows = (0..spec_ref.cell_count()).flat_map(move |cell| {
            let (state, t) = spec_ref.point(cell);
            [
                ("oracle-grad".to_string(), state[0], t, truth[cell]),
                ("pipe-grad".to_string(), state[0], t, pipe[cell]),
            ]
        });
        write_plot_csv(&ctx.out_dir.join("fig_gradient.csv"), "series,x,T,value", rows)?;
    }
    Ok(report)
}

pub fn run(cfg: &Config, ctx: &RunContext) -> Result<MetricsReport, HarnessError> {
    let artifacts = generalization::prepare(cfg, &ctx.out_dir)?;
    let report = evaluate(cfg, &artifacts, ctx)?;
    report.write_csv(&ctx.out_dir.join("report.csv"))?;
    Ok(report)
}
