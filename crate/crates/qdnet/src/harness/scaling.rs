//! Deployment timing as the number of nodes grows.

use std::path::PathBuf;

use qdnet_core::topology::{parse_config, NetworkConfig};
use serde::Serialize;
use tracing::warn;

use super::stats::Summary;
use super::{write_csv, HarnessError, LocalNetwork, LocalOptions};
use crate::orchestrator::{Stage, StageReport};

#[derive(Debug, Clone)]
pub struct ScalingOptions {
    pub artifacts: PathBuf,
    pub counts: Vec<usize>,
    pub repetitions: usize,
    pub out: Option<PathBuf>,
}

impl ScalingOptions {
    pub fn new(artifacts: impl Into<PathBuf>) -> Self {
        Self {
            artifacts: artifacts.into(),
            counts: vec![2, 4, 10],
            repetitions: 10,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSample {
    pub nodes: usize,
    pub repetition: usize,
    pub stage: String,
    pub seconds: f64,
    pub invocations: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub nodes: usize,
    pub stage: String,
    pub n: usize,
    pub mean_s: f64,
    pub ci95_s: f64,
    pub min_invocations: u32,
    pub max_invocations: u32,
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub reports: Vec<(usize, StageReport)>,
    pub rows: Vec<ScalingRow>,
    /// Repetitions that failed to deploy.
    pub failures: Vec<String>,
}

impl ScalingReport {
    pub fn row(&self, nodes: usize, stage: Stage) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.nodes == nodes && r.stage == stage.name())
    }

    /// Node-scoped stages ran once per node and the others exactly once,
    /// in every deployment.
    pub fn invocation_law_holds(&self) -> bool {
        !self.reports.is_empty()
            && self.reports.iter().all(|(n, report)| {
                Stage::ALL.iter().all(|&stage| {
                    let expected = if stage.is_node_scoped() { *n as u32 } else { 1 };
                    *report.invocations.get(stage) == expected
                })
            })
    }
}

/// A chain of `n` nodes, each on its own host.
pub fn chain_config(n: usize) -> NetworkConfig {
    let mut doc = String::from("nodes:\n");
    for i in 0..n {
        doc.push_str(&format!("  - {{ name: N{i}, api_port: {}, host: host-{i} }}\n", 20000 + i));
    }
    doc.push_str("links:\n");
    for i in 1..n {
        doc.push_str(&format!("  - {{ endpoint_a: N{}, endpoint_b: N{i} }}\n", i - 1));
    }
    doc.push_str("engine_host: engine\nbus_endpoint: 127.0.0.1:5672\n");
    parse_config(&doc).expect("generated chain parses")
}

pub async fn scaling_a(options: &ScalingOptions) -> Result<ScalingReport, HarnessError> {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let local = LocalOptions::new(&options.artifacts);
    for &n in &options.counts {
        let config = chain_config(n);
        for repetition in 0..options.repetitions {
            match LocalNetwork::deploy(&config, &local).await {
                Ok(net) => {
                    reports.push((n, net.deployment.report.clone()));
                    net.shutdown().await;
                }
                Err(e) => {
                    warn!(nodes = n, repetition, error = %e, "deployment failed");
                    failures.push(format!("{n} nodes, repetition {repetition}: {e}"));
                }
            }
        }
    }

    let mut samples = Vec::new();
    for (i, (n, report)) in reports.iter().enumerate() {
        for stage in Stage::ALL {
            samples.push(ScalingSample {
                nodes: *n,
                repetition: i,
                stage: stage.name().into(),
                seconds: *report.stages.get(stage),
                invocations: *report.invocations.get(stage),
            });
        }
    }
    let mut rows = Vec::new();
    for &n in &options.counts {
        for stage in Stage::ALL {
            let of_stage: Vec<&ScalingSample> =
                samples.iter().filter(|s| s.nodes == n && s.stage == stage.name()).collect();
            let seconds: Vec<f64> = of_stage.iter().map(|s| s.seconds).collect();
            let Some(summary) = Summary::of(&seconds) else {
                continue;
            };
            rows.push(ScalingRow {
                nodes: n,
                stage: stage.name().into(),
                n: summary.n,
                mean_s: summary.mean,
                ci95_s: summary.ci95,
                min_invocations: of_stage.iter().map(|s| s.invocations).min().unwrap_or(0),
                max_invocations: of_stage.iter().map(|s| s.invocations).max().unwrap_or(0),
            });
        }
    }

    if let Some(out) = &options.out {
        std::fs::create_dir_all(out)?;
        write_csv(&out.join("scaling-a-samples.csv"), &samples)?;
        write_csv(&out.join("scaling-a.csv"), &rows)?;
    }
    Ok(ScalingReport {
        reports,
        rows,
        failures,
    })
}
