//! Key-size sweep over the realistic Madrid links.
//!
//! For every link and key size the same request is repeated; each sample
//! records the engine's simulated duration of the request and its key
//! bit rate, i.e. the secure bits the rounds produced per simulated second.

use std::path::PathBuf;
use std::time::Instant;

use qdnet_engine::{LogRecord, RoundReport};
use serde::Serialize;
use tracing::warn;
use uuid::Uuid;

use super::stats::Summary;
use super::{madrid_realistic, write_csv, HarnessError, LocalNetwork, LocalOptions};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub artifacts: PathBuf,
    pub seed: u64,
    pub time_scale: f64,
    pub sizes: Vec<u32>,
    pub repetitions: usize,
    pub out: Option<PathBuf>,
}

impl SweepOptions {
    pub fn new(artifacts: impl Into<PathBuf>) -> Self {
        Self {
            artifacts: artifacts.into(),
            seed: 0,
            time_scale: super::DEFAULT_TIME_SCALE,
            sizes: vec![64, 128, 256, 512],
            repetitions: 10,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSample {
    pub link: String,
    pub size: u32,
    pub repetition: usize,
    /// Simulated seconds; empty when the exchange failed.
    pub time_s: Option<f64>,
    pub kbr_bps: Option<f64>,
    pub rounds: Option<usize>,
    pub wall_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub link: String,
    pub size: u32,
    pub n: usize,
    pub mean_time_s: f64,
    pub ci95_time_s: f64,
    pub sd_time_s: f64,
    pub mean_kbr_bps: f64,
    pub ci95_kbr_bps: f64,
    pub sd_kbr_bps: f64,
    pub mean_wall_s: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub samples: Vec<SweepSample>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, link: &str, size: u32) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.link == link && r.size == size)
    }

    pub fn links(&self) -> Vec<String> {
        let mut links: Vec<String> = Vec::new();
        for row in &self.rows {
            if !links.contains(&row.link) {
                links.push(row.link.clone());
            }
        }
        links
    }
}

fn rounds_of(records: &[LogRecord], request: Uuid) -> Vec<RoundReport> {
    records
        .iter()
        .filter(|r| r.event == "round_completed" && r.request_id == Some(request))
        .filter_map(|r| serde_json::from_value(r.detail.clone()).ok())
        .collect()
}

/// Deploys the realistic Madrid network and sweeps every link.
pub async fn sweep_c(options: &SweepOptions) -> Result<SweepReport, HarnessError> {
    let local = LocalOptions {
        time_scale: options.time_scale,
        seed: options.seed,
        ..LocalOptions::new(&options.artifacts)
    };
    let net = LocalNetwork::deploy(&madrid_realistic(), &local).await?;
    let links: Vec<(String, String)> = net
        .config()
        .links
        .iter()
        .map(|l| (l.endpoint_a.clone(), l.endpoint_b.clone()))
        .collect();

    let mut pending = Vec::new();
    for (a, b) in &links {
        let client = net.client(a);
        let peer_sae = net.sae(b);
        for &size in &options.sizes {
            for repetition in 0..options.repetitions {
                let started = Instant::now();
                let outcome = client.enc_key(&peer_sae, size).await;
                pending.push((format!("{a}-{b}"), size, repetition, started.elapsed().as_secs_f64(), outcome));
            }
        }
    }
    let records = net.engine_records();
    net.shutdown().await;

    let samples: Vec<SweepSample> = pending
        .into_iter()
        .map(|(link, size, repetition, wall_s, outcome)| {
            let mut sample = SweepSample {
                link,
                size,
                repetition,
                time_s: None,
                kbr_bps: None,
                rounds: None,
                wall_s,
                error: None,
            };
            match outcome.map(|(key_id, _)| Uuid::parse_str(&key_id)) {
                Ok(Ok(id)) => {
                    let rounds = rounds_of(&records, id);
                    let time: f64 = rounds.iter().map(|r| r.duration_s).sum();
                    let bits: usize = rounds.iter().map(|r| r.secure_bits).sum();
                    if rounds.is_empty() || time <= 0.0 {
                        sample.error = Some("no rounds logged for the request".into());
                    } else {
                        sample.time_s = Some(time);
                        sample.kbr_bps = Some(bits as f64 / time);
                        sample.rounds = Some(rounds.len());
                    }
                }
                Ok(Err(e)) => sample.error = Some(format!("unparseable key id: {e}")),
                Err(e) => sample.error = Some(e.to_string()),
            }
            if let Some(error) = &sample.error {
                warn!(link = %sample.link, size, repetition, %error, "exchange failed");
            }
            sample
        })
        .collect();

    let mut rows = Vec::new();
    for (a, b) in &links {
        let link = format!("{a}-{b}");
        for &size in &options.sizes {
            let of = |f: fn(&SweepSample) -> Option<f64>| -> Vec<f64> {
                samples
                    .iter()
                    .filter(|s| s.link == link && s.size == size)
                    .filter_map(f)
                    .collect()
            };
            let (Some(time), Some(kbr), Some(wall)) = (
                Summary::of(&of(|s| s.time_s)),
                Summary::of(&of(|s| s.kbr_bps)),
                Summary::of(&of(|s| s.error.is_none().then_some(s.wall_s))),
            ) else {
                continue;
            };
            rows.push(SweepRow {
                link: link.clone(),
                size,
                n: time.n,
                mean_time_s: time.mean,
                ci95_time_s: time.ci95,
                sd_time_s: time.sd,
                mean_kbr_bps: kbr.mean,
                ci95_kbr_bps: kbr.ci95,
                sd_kbr_bps: kbr.sd,
                mean_wall_s: wall.mean,
            });
        }
    }

    if let Some(out) = &options.out {
        std::fs::create_dir_all(out)?;
        write_csv(&out.join("sweep-c-samples.csv"), &samples)?;
        write_csv(&out.join("sweep-c.csv"), &rows)?;
    }
    Ok(SweepReport { samples, rows })
}
