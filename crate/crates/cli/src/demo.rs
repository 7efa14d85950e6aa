use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use hopool_core::io::{episode_to_container, head_weights_to_container};
use hopool_core::pipeline::{class_ranking, forward_episode, synth_episode, SynthSpec};
use hopool_core::{EpisodeBatch, EpisodeOutput, HeadWeights, PipelineConfig, SplitConfig};
use nalgebra::DMatrix;

use crate::ParamArgs;

#[derive(Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Support crops.
    #[arg(short = 'z', long = "z", default_value_t = 5)]
    z: usize,
    /// Query RoIs.
    #[arg(short = 'b', long = "b", default_value_t = 3)]
    b: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Spatial positions per crop.
    #[arg(long, default_value_t = 9)]
    n: usize,
    /// Distance between the synthetic class centres.
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value = "5:2:1")]
    split: SplitConfig,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// RoI worker threads (defaults to TENET_POOL_THREADS, then 1).
    #[arg(long)]
    threads: Option<usize>,
    /// Write the episode, weights and every intermediate to a TNSC container.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

fn dump(path: &std::path::Path, e: &EpisodeBatch, w: &HeadWeights, out: &EpisodeOutput) -> Result<()> {
    let mut c = episode_to_container(e);
    for (name, value) in head_weights_to_container(w).sections {
        c.sections.push((format!("weights/{name}"), value));
    }
    for (i, h) in out.support_hops.iter().enumerate() {
        c.push_matrix(format!("support_hop/{i}"), column(h.as_slice()));
    }
    for (i, h) in out.roi_hops.iter().enumerate() {
        c.push_matrix(format!("roi_hop/{i}"), column(h.as_slice()));
    }
    c.push_matrix("rpn_map", out.rpn_map.clone());
    c.push_matrix("objectness", column(&out.objectness));
    c.push_matrix("zshot", out.zshot.clone());
    for (i, r) in out.relations.iter().enumerate() {
        c.push_matrix(format!("relation/{i}/spatial"), r.spatial.clone());
        c.push_matrix(format!("relation/{i}/fo_ho"), column(r.fo_ho.as_slice()));
        c.push_matrix(format!("relation/{i}/combined"), r.combined.clone());
    }
    c.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn run(a: &DemoArgs) -> Result<bool> {
    let params = a.params.params()?;
    let e = synth_episode(&SynthSpec::new(a.seed, a.z, a.b, a.dim, a.n, a.separation))?;
    let w = HeadWeights::seeded(a.dim, a.seed)?;
    let cfg = PipelineConfig {
        split: a.split.clone(),
        params: params.clone(),
        heads: a.heads,
        sigma: a.sigma,
        threads: a.threads,
    };
    let out = forward_episode(&e, &cfg, &w)?;

    let mut s = io::stdout().lock();
    writeln!(
        s,
        "episode seed={} Z={} B={} d={} N={} separation={} split={} eta={} eta'={} sigma={} heads={}",
        a.seed, a.z, a.b, a.dim, a.n, a.separation, a.split, a.params.eta, params.eta_prime, a.sigma, a.heads
    )?;
    for sub in &out.eta_substitutions {
        writeln!(s, "order {} eta {} -> {}", sub.order, sub.requested, sub.used)?;
    }
    writeln!(s)?;
    writeln!(s, "{:>4} {:>6}  ranking (class:similarity)", "roi", "label")?;
    let mut matched = 0;
    for (i, (h, &label)) in out.roi_hops.iter().zip(&e.roi_labels).enumerate() {
        let ranking = class_ranking(&out.support_hops, &e.support_labels, h, a.sigma)?;
        let hit = ranking.first().map(|r| r.0) == Some(label);
        matched += usize::from(hit);
        let cells: Vec<String> = ranking.iter().map(|(k, v)| format!("{k}:{v:.4}")).collect();
        writeln!(s, "{i:>4} {label:>6}  {}{}", cells.join(" "), if hit { "" } else { "  (miss)" })?;
    }
    writeln!(s, "matched class first: {matched}/{}", out.roi_hops.len())?;
    writeln!(s)?;
    writeln!(s, "{:>4} {:>12} {:>12} {:>12} {:>12}", "roi", "|R_spatial|", "|FO*HO|", "|R_combined|", "objectness")?;
    for (i, r) in out.relations.iter().enumerate() {
        writeln!(
            s,
            "{i:>4} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            r.spatial.norm(),
            r.fo_ho.norm(),
            r.combined.norm(),
            out.objectness[i]
        )?;
    }
    s.flush()?;
    if let Some(path) = &a.dump {
        dump(path, &e, &w, &out)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(true)
}
