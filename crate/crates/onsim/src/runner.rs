//! Scenario execution and parameter sweeps, plus emission of every CSV
//! artifact (packet fates, network lifecycle log, knowledge dump, power
//! table, plot-ready figure tables, run summaries).

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{RunOutput, RunOverrides, run};
use crate::metrics::{self, RunMetrics, SummaryRow, fmt_f64, fmt_level, fmt_opt_f64};
use crate::radio::PowerPhase;
use crate::routing::ProtocolKind;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

/// One executed run with its metrics.
#[derive(Debug)]
pub struct RunReport {
    pub output: RunOutput,
    pub metrics: RunMetrics,
    pub summary: SummaryRow,
}

fn report_for(cfg: &ScenarioConfig, overrides: &RunOverrides) -> RunReport {
    let output = run(cfg, overrides);
    let metrics = metrics::compute(cfg, &output);
    let summary = SummaryRow::from_run(&output, &metrics);
    RunReport {
        output,
        metrics,
        summary,
    }
}

/// Result of `run_scenario`: the managed run, plus a management-disabled
/// baseline when the scenario asks for a before/after comparison.
#[derive(Debug)]
pub struct ScenarioReport {
    pub primary: RunReport,
    pub direct_baseline: Option<RunReport>,
}

impl ScenarioReport {
    /// Mean delivery latency of the direct baseline, when present.
    pub fn direct_latency_s(&self) -> Option<f64> {
        self.direct_baseline
            .as_ref()
            .and_then(|r| r.metrics.mean_latency_s)
    }

    pub fn on_latency_s(&self) -> Option<f64> {
        self.primary.metrics.mean_latency_s
    }

    /// Steady configured power of the direct baseline, mW.
    pub fn direct_power_mw(&self) -> Option<f64> {
        self.direct_baseline
            .as_ref()
            .map(|r| r.metrics.total_power_mw)
    }

    /// Steady configured power while opportunistic networks served, mW.
    pub fn on_power_mw(&self) -> Option<f64> {
        self.primary.output.on_mode_power_mw
    }
}

/// Runs a scenario with the given overrides. When the config sets
/// `cms.compare_direct`, the same scenario also runs with management
/// disabled to produce the before/after baseline.
pub fn run_scenario(cfg: &ScenarioConfig, overrides: &RunOverrides) -> ScenarioReport {
    let primary = report_for(cfg, overrides);
    let direct_baseline = if cfg.cms.compare_direct {
        Some(report_for(
            cfg,
            &RunOverrides {
                cms_enabled: Some(false),
                ..overrides.clone()
            },
        ))
    } else {
        None
    };
    ScenarioReport {
        primary,
        direct_baseline,
    }
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone)]
pub struct SweepAxes {
    pub phases: Vec<PowerPhase>,
    pub levels_mps: Vec<f64>,
    pub protocols: Vec<ProtocolKind>,
    pub replications: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub phase: u8,
    pub level_mps: f64,
    pub protocol: ProtocolKind,
}

/// Aggregation of one sweep cell over its replications.
#[derive(Debug, Clone)]
pub struct CellAggregate {
    pub key: CellKey,
    pub n: u32,
    pub mean_delay_s: f64,
    /// Half-width of the 95% confidence interval (normal approximation).
    pub delay_ci95_s: f64,
    pub total_power_mw: f64,
    pub reduction_pct: f64,
    pub acceptable: bool,
    pub mean_latency_s: Option<f64>,
}

#[derive(Debug)]
pub struct SweepResult {
    /// One row per run, sorted by (phase, level, protocol, seed).
    pub runs: Vec<SummaryRow>,
    /// One aggregate per cell, sorted by (phase, level, protocol).
    pub cells: Vec<CellAggregate>,
}

/// Executes every cell of the sweep. Cells are independent and run in
/// parallel; results are sorted by cell key before aggregation so output
/// is byte-identical regardless of scheduling.
pub fn sweep(cfg: &ScenarioConfig, axes: &SweepAxes, threshold_s: f64) -> SweepResult {
    assert!(axes.replications >= 1, "sweeps need at least one replication");
    let mobility = cfg.mobility_config();
    for level in &axes.levels_mps {
        assert!(
            mobility.level_index(*level).is_some(),
            "sweep level {level} m/s is not one of the configured speeds {:?}",
            cfg.mobility.level_speeds
        );
    }
    let mut jobs: Vec<(CellKey, u64)> = Vec::new();
    for phase in &axes.phases {
        for level in &axes.levels_mps {
            for protocol in &axes.protocols {
                for rep in 0..axes.replications {
                    jobs.push((
                        CellKey {
                            phase: phase.index(),
                            level_mps: *level,
                            protocol: *protocol,
                        },
                        cfg.scenario.master_seed + rep as u64,
                    ));
                }
            }
        }
    }
    let mut runs: Vec<(CellKey, SummaryRow)> = jobs
        .par_iter()
        .map(|(key, seed)| {
            let overrides = RunOverrides {
                seed: Some(*seed),
                max_speed_mps: Some(key.level_mps),
                phase: PowerPhase::new(key.phase),
                protocol: Some(key.protocol),
                cms_enabled: None,
            };
            let report = report_for(cfg, &overrides);
            (key.clone(), report.summary)
        })
        .collect();
    runs.sort_by(|a, b| {
        (a.0.phase, a.0.level_mps, a.0.protocol, a.1.seed)
            .partial_cmp(&(b.0.phase, b.0.level_mps, b.0.protocol, b.1.seed))
            .unwrap()
    });

    let mut cells: Vec<CellAggregate> = Vec::new();
    for phase in &axes.phases {
        for level in &axes.levels_mps {
            for protocol in &axes.protocols {
                let rows: Vec<&SummaryRow> = runs
                    .iter()
                    .filter(|(k, _)| {
                        k.phase == phase.index()
                            && k.level_mps == *level
                            && k.protocol == *protocol
                    })
                    .map(|(_, r)| r)
                    .collect();
                let n = rows.len() as u32;
                let delays: Vec<f64> = rows.iter().filter_map(|r| r.mean_delay_s).collect();
                let mean_delay = if delays.is_empty() {
                    f64::NAN
                } else {
                    delays.iter().sum::<f64>() / delays.len() as f64
                };
                let ci = if delays.len() > 1 && mean_delay.is_finite() {
                    let var = delays
                        .iter()
                        .map(|d| (d - mean_delay).powi(2))
                        .sum::<f64>()
                        / (delays.len() - 1) as f64;
                    1.96 * (var / delays.len() as f64).sqrt()
                } else {
                    0.0
                };
                let latencies: Vec<f64> = rows.iter().filter_map(|r| r.mean_latency_s).collect();
                let mean_latency = if latencies.is_empty() {
                    None
                } else {
                    Some(latencies.iter().sum::<f64>() / latencies.len() as f64)
                };
                cells.push(CellAggregate {
                    key: CellKey {
                        phase: phase.index(),
                        level_mps: *level,
                        protocol: *protocol,
                    },
                    n,
                    mean_delay_s: mean_delay,
                    delay_ci95_s: ci,
                    total_power_mw: rows.first().map(|r| r.total_power_mw).unwrap_or(0.0),
                    reduction_pct: rows.first().map(|r| r.reduction_pct).unwrap_or(0.0),
                    acceptable: mean_delay.is_finite() && mean_delay <= threshold_s,
                    mean_latency_s: mean_latency,
                });
            }
        }
    }
    SweepResult {
        runs: runs.into_iter().map(|(_, r)| r).collect(),
        cells,
    }
}

// ---------------------------------------------------------------------------
// Artifact emission

fn write_file(path: &Path, content: &str) -> Result<(), RunnerError> {
    let mut f = std::fs::File::create(path).map_err(|source| RunnerError::Write {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(content.as_bytes()).map_err(|source| RunnerError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SummaryRow::HEADER);
    s.push('\n');
    for row in rows {
        s.push_str(&row.to_csv());
        s.push('\n');
    }
    s
}

pub fn packets_csv(output: &RunOutput) -> String {
    let mut s = String::from("flow,seq,created_at,delivered_at,delay_s,hops,fate\n");
    for p in &output.packets {
        let flow = format!("{}/{}", p.flow_label, p.direction.as_str());
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            flow,
            p.seq,
            fmt_f64(p.created_at.as_secs(), 6),
            fmt_opt_f64(p.delivered_at.map(|t| t.as_secs()), 6),
            fmt_opt_f64(p.delay_s(), 9),
            p.hops(),
            p.fate.as_str(),
        ));
    }
    s
}

pub fn on_events_csv(output: &RunOutput) -> String {
    let mut s =
        String::from("on_id,trigger,participants,gateway,created_at,terminated_at,outcome\n");
    for e in &output.on_log {
        let participants = e
            .participants
            .iter()
            .map(|p| output.node_names[p.0].clone())
            .collect::<Vec<_>>()
            .join("|");
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.id,
            e.trigger_kind,
            participants,
            output.node_names[e.gateway.0],
            fmt_f64(e.created_at.as_secs(), 6),
            fmt_opt_f64(e.terminated_at.map(|t| t.as_secs()), 6),
            e.outcome,
        ));
    }
    s
}

pub fn knowledge_csv(output: &RunOutput) -> String {
    let mut s = String::from("signature,decision,mean_delay_s,power_mw,success,hit_count\n");
    for rec in &output.knowledge {
        let decision = rec
            .decision
            .iter()
            .map(|p| {
                format!(
                    "{}:{}->{}",
                    p.trigger_kind,
                    p.subjects
                        .iter()
                        .map(|s| output.node_names[s.0].clone())
                        .collect::<Vec<_>>()
                        .join("+"),
                    output.node_names[p.gateway.0],
                )
            })
            .collect::<Vec<_>>()
            .join("|");
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            rec.signature,
            decision,
            fmt_f64(rec.outcome.mean_delay_s, 9),
            fmt_f64(rec.outcome.power_mw, 6),
            rec.outcome.success,
            rec.hit_count,
        ));
    }
    s
}

/// Power per phase for the scenario topology (the total-power figure).
pub fn power_csv(cfg: &ScenarioConfig) -> String {
    let baseline = metrics::power_for_phase(cfg, PowerPhase::new(1).unwrap());
    let mut s = String::from("phase,total_power_mw,reduction_pct_vs_phase1\n");
    for phase in PowerPhase::ALL {
        let p = metrics::power_for_phase(cfg, phase);
        s.push_str(&format!(
            "{},{},{}\n",
            phase.index(),
            fmt_f64(p, 6),
            fmt_f64(crate::radio::reduction_pct(baseline, p), 6),
        ));
    }
    s
}

pub fn positions_csv(output: &RunOutput) -> String {
    let mut s = String::from("t,node,x,y\n");
    for p in &output.positions {
        s.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(p.t.as_secs(), 3),
            output.node_names[p.node.0],
            fmt_f64(p.x, 3),
            fmt_f64(p.y, 3),
        ));
    }
    s
}

/// Delay-versus-mobility table across sweep cells (one row per
/// phase x level x protocol).
pub fn delay_vs_mobility_csv(result: &SweepResult) -> String {
    let mut s = String::from("phase,level,protocol,mean_delay_s,ci95_s,acceptable\n");
    for cell in &result.cells {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.key.phase,
            fmt_level(cell.key.level_mps),
            cell.key.protocol,
            fmt_f64(cell.mean_delay_s, 9),
            fmt_f64(cell.delay_ci95_s, 9),
            cell.acceptable,
        ));
    }
    s
}

/// Before/after delivery-latency table for aggregation scenarios.
pub fn latency_before_after_csv(report: &ScenarioReport) -> String {
    let mut s = String::from("mode,mean_latency_s\n");
    if let Some(direct) = report.direct_latency_s() {
        s.push_str(&format!("direct,{}\n", fmt_f64(direct, 6)));
    }
    if let Some(on) = report.on_latency_s() {
        s.push_str(&format!("opportunistic,{}\n", fmt_f64(on, 6)));
    }
    s
}

/// Before/after power table: configured sums and the airtime-energy view.
pub fn power_before_after_csv(report: &ScenarioReport) -> String {
    let mut s = String::from("mode,total_power_mw,airtime_mean_power_mw\n");
    if let Some(direct) = &report.direct_baseline {
        s.push_str(&format!(
            "direct,{},{}\n",
            fmt_f64(direct.metrics.total_power_mw, 6),
            fmt_f64(direct.output.airtime_mean_power_mw(), 6),
        ));
    }
    s.push_str(&format!(
        "opportunistic,{},{}\n",
        fmt_f64(
            report
                .on_power_mw()
                .unwrap_or(report.primary.metrics.total_power_mw),
            6
        ),
        fmt_f64(report.primary.output.airtime_mean_power_mw(), 6),
    ));
    s
}

/// Writes the full artifact set for a single scenario run into `out_dir`.
pub fn write_run_artifacts(
    out_dir: &Path,
    cfg: &ScenarioConfig,
    report: &ScenarioReport,
) -> Result<(), RunnerError> {
    std::fs::create_dir_all(out_dir).map_err(|source| RunnerError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut rows = vec![report.primary.summary.clone()];
    if let Some(direct) = &report.direct_baseline {
        rows.push(direct.summary.clone());
    }
    write_file(&out_dir.join("summary.csv"), &summary_csv(&rows))?;
    write_file(&out_dir.join("packets.csv"), &packets_csv(&report.primary.output))?;
    write_file(&out_dir.join("on_events.csv"), &on_events_csv(&report.primary.output))?;
    write_file(&out_dir.join("knowledge.csv"), &knowledge_csv(&report.primary.output))?;
    write_file(&out_dir.join("power.csv"), &power_csv(cfg))?;
    write_file(&out_dir.join("fig_power_vs_phase.csv"), &power_csv(cfg))?;
    if report.direct_baseline.is_some() {
        write_file(
            &out_dir.join("fig_latency_before_after.csv"),
            &latency_before_after_csv(report),
        )?;
        write_file(
            &out_dir.join("fig_power_before_after.csv"),
            &power_before_after_csv(report),
        )?;
    }
    if !report.primary.output.positions.is_empty() {
        write_file(&out_dir.join("positions.csv"), &positions_csv(&report.primary.output))?;
    }
    Ok(())
}

/// Writes sweep artifacts: per-run rows, per-cell aggregates, and the
/// delay-versus-mobility figure table.
pub fn write_sweep_artifacts(
    out_dir: &Path,
    cfg: &ScenarioConfig,
    result: &SweepResult,
) -> Result<(), RunnerError> {
    std::fs::create_dir_all(out_dir).map_err(|source| RunnerError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;
    write_file(&out_dir.join("sweep_runs.csv"), &summary_csv(&result.runs))?;
    let mut agg = String::from(
        "phase,level,protocol,n,mean_delay_s,ci95_s,total_power_mw,reduction_pct,acceptable,mean_latency_s\n",
    );
    for cell in &result.cells {
        agg.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            cell.key.phase,
            fmt_level(cell.key.level_mps),
            cell.key.protocol,
            cell.n,
            fmt_f64(cell.mean_delay_s, 9),
            fmt_f64(cell.delay_ci95_s, 9),
            fmt_f64(cell.total_power_mw, 6),
            fmt_f64(cell.reduction_pct, 6),
            cell.acceptable,
            fmt_opt_f64(cell.mean_latency_s, 6),
        ));
    }
    write_file(&out_dir.join("sweep_cells.csv"), &agg)?;
    write_file(
        &out_dir.join("fig_delay_vs_mobility.csv"),
        &delay_vs_mobility_csv(result),
    )?;
    write_file(&out_dir.join("fig_power_vs_phase.csv"), &power_csv(cfg))?;
    Ok(())
}
