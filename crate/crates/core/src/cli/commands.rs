//! The `afem` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::mlfd::{ArrayMeta, MlfdWriter};
use super::study::{convstudy, matched_dofs, sample_stream, summarize, worker_pool, Sample, SampleStudy};
use crate::adapt::{afem, IterationRecord};
use crate::convnet::{run_suite, StencilBank, VerifyRow};
use crate::error::Result;
use crate::field::{Mask, TriImage};

pub const RUN_CSV: &str = "afem.csv";
pub const SNAPSHOT_DIR: &str = "snapshot";
pub const STUDY_CSV: &str = "convstudy.csv";
pub const STUDY_SAMPLES_CSV: &str = "convstudy_samples.csv";
pub const STUDY_MATCHED_CSV: &str = "convstudy_matched.csv";
pub const DATASET_DIR: &str = "dataset";

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".into(), num)
}

pub fn afem_csv(history: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,dofs,eta2_total,h1_rel_err,l2_rel_err,marked,sweeps\n");
    for r in history {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.dofs,
            num(r.eta2_total),
            opt(r.h1_rel_err),
            opt(r.l2_rel_err),
            r.marked,
            r.sweeps
        )
        .expect("write to string");
    }
    s
}

fn tri_meta(name: String, img: &TriImage, level: usize, channels: &str, sample: Option<usize>) -> ArrayMeta {
    ArrayMeta {
        name,
        shape: img.shape().to_vec(),
        level: Some(level),
        channels: channels.into(),
        sample,
        segments: None,
    }
}

fn mask_meta(name: String, m: &Mask, level: usize, sample: Option<usize>) -> ArrayMeta {
    ArrayMeta { name, shape: m.shape().to_vec(), level: Some(level), channels: "mask".into(), sample, segments: None }
}

fn image_meta(name: String, shape: &[usize], level: usize, channels: &str, sample: Option<usize>) -> ArrayMeta {
    ArrayMeta { name, shape: shape.to_vec(), level: Some(level), channels: channels.into(), sample, segments: None }
}

/// One adaptive run on the configured (or first sampled) parameter, with
/// reference errors. Writes the iteration CSV and a snapshot of every iteration.
pub fn cmd_run(config: &RunConfig, out: &Path) -> Result<Vec<IterationRecord>> {
    let g = config.hierarchy()?;
    let y = match &config.problem.parameters {
        Some(y) => y.clone(),
        None => sample_stream(config, 1).remove(0),
    };
    let sample = Sample::new(config, &g, &y)?;
    let reference = sample.reference(config)?;
    fs::create_dir_all(out)?;
    let mut snap = MlfdWriter::create(&out.join(SNAPSHOT_DIR), &config.hash(), config.sampling.seed)?;
    snap.add_sample(0, &y);
    let fine = g.finest();
    let nf = g.n(fine);
    snap.add_f64(image_meta("kappa".into(), &[nf, nf], fine, "kappa", None), sample.kappa.iter())?;
    snap.add_f64(image_meta("f".into(), &[nf, nf], fine, "f", None), sample.disc.load.iter())?;
    let outcome = afem(&sample.disc, &config.afem_config(), Some(&reference), |s| {
        let it = s.record.iteration;
        for k in 0..g.levels() {
            let u = s.u.level(k);
            let eta2 = &s.estimate.eta2[k];
            let active = s.u.masks().active(k);
            snap.add_f64(image_meta(format!("iter{it}/u/{k}"), u.shape(), k, "u", None), u.iter())?;
            snap.add_f64(tri_meta(format!("iter{it}/eta2/{k}"), eta2, k, "eta2", None), eta2.iter())?;
            snap.add_mask(mask_meta(format!("iter{it}/mask/{k}"), active, k, None), active.iter())?;
        }
        Ok(())
    })?;
    snap.finish()?;
    fs::write(out.join(RUN_CSV), afem_csv(&outcome.history))?;
    Ok(outcome.history)
}

fn study_samples_csv(studies: &[SampleStudy]) -> String {
    let mut s = String::from("sample,family,step,dofs,h1_rel_err,l2_rel_err,energy_err_sq,eta2_total\n");
    for (i, st) in studies.iter().enumerate() {
        for (family, pts) in [("adaptive", &st.adaptive), ("uniform", &st.uniform)] {
            for (step, p) in pts.iter().enumerate() {
                writeln!(
                    s,
                    "{i},{family},{step},{},{},{},{},{}",
                    p.dofs,
                    num(p.h1_rel),
                    num(p.l2_rel),
                    num(p.energy_sq),
                    num(p.eta2)
                )
                .expect("write to string");
            }
        }
    }
    s
}

/// Adaptive against uniform refinement over the sample set.
pub fn cmd_convstudy(config: &RunConfig, out: &Path, workers: usize) -> Result<Vec<SampleStudy>> {
    let studies = convstudy(config, workers)?;
    fs::create_dir_all(out)?;
    let rows = summarize(&studies);
    let mut s = String::from("family,step,samples,dofs_mean,h1_mean,h1_min,h1_max,l2_mean,l2_min,l2_max\n");
    for r in &rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.family,
            r.step,
            r.samples,
            num(r.dofs_mean),
            num(r.h1_mean),
            num(r.h1_min),
            num(r.h1_max),
            num(r.l2_mean),
            num(r.l2_min),
            num(r.l2_max)
        )
        .expect("write to string");
    }
    fs::write(out.join(STUDY_CSV), s)?;
    let mut m = String::from("h1_rel_err,adaptive_dofs,uniform_dofs\n");
    for p in matched_dofs(&rows) {
        writeln!(m, "{},{},{}", num(p.h1), num(p.adaptive_dofs), num(p.uniform_dofs)).expect("write to string");
    }
    fs::write(out.join(STUDY_MATCHED_CSV), m)?;
    fs::write(out.join(STUDY_SAMPLES_CSV), study_samples_csv(&studies))?;
    Ok(studies)
}

pub fn verify_table(rows: &[VerifyRow]) -> String {
    let mut s = format!("{:<34} {:>6} {:>12} {:>10}  result\n", "check", "cases", "max_dev", "tol");
    for r in rows {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        writeln!(s, "{:<34} {:>6} {:>12.3e} {:>10.1e}  {verdict}", r.name, r.cases, r.max_dev, r.tol)
            .expect("write to string");
    }
    s
}

/// Runs the equivalence suite; the flag is true when every row passed.
pub fn cmd_verify(config: &RunConfig) -> Result<(Vec<VerifyRow>, bool)> {
    let rows = run_suite(&config.verify)?;
    let ok = rows.iter().all(VerifyRow::passed);
    Ok((rows, ok))
}

struct DatasetSample {
    parameters: Vec<f64>,
    kappa: crate::field::Image,
    load: crate::field::Image,
    u: Vec<crate::field::Image>,
    eta2: Vec<TriImage>,
    masks: Vec<Mask>,
}

/// Final adaptive state of every sample plus the kernel bank.
pub fn cmd_gen_dataset(config: &RunConfig, out: &Path, workers: usize) -> Result<PathBuf> {
    use rayon::prelude::*;
    let g = config.hierarchy()?;
    let params = sample_stream(config, config.sampling.count);
    let afem_config = config.afem_config();
    let samples: Vec<DatasetSample> = worker_pool(workers)?.install(|| {
        params
            .par_iter()
            .map(|y| {
                let s = Sample::new(config, &g, y)?;
                let o = afem(&s.disc, &afem_config, None, |_| Ok(()))?;
                Ok(DatasetSample {
                    parameters: y.clone(),
                    masks: (0..g.levels()).map(|k| o.u.masks().active(k).clone()).collect(),
                    u: o.u.images().to_vec(),
                    eta2: o.estimate.eta2,
                    kappa: s.kappa,
                    load: s.disc.load,
                })
            })
            .collect::<Result<_>>()
    })?;
    let dir = out.join(DATASET_DIR);
    let mut w = MlfdWriter::create(&dir, &config.hash(), config.sampling.seed)?;
    let fine = g.finest();
    for (i, s) in samples.iter().enumerate() {
        w.add_sample(i, &s.parameters);
        let sm = Some(i);
        w.add_f64(image_meta(format!("sample{i:05}/kappa"), s.kappa.shape(), fine, "kappa", sm), s.kappa.iter())?;
        w.add_f64(image_meta(format!("sample{i:05}/f"), s.load.shape(), fine, "f", sm), s.load.iter())?;
        for k in 0..g.levels() {
            w.add_f64(image_meta(format!("sample{i:05}/u/{k}"), s.u[k].shape(), k, "u", sm), s.u[k].iter())?;
            w.add_f64(tri_meta(format!("sample{i:05}/eta2/{k}"), &s.eta2[k], k, "eta2", sm), s.eta2[k].iter())?;
            w.add_mask(mask_meta(format!("sample{i:05}/mask/{k}"), &s.masks[k], k, sm), s.masks[k].iter())?;
        }
    }
    let (data, segments) = StencilBank::build(&g).to_flat();
    let meta = ArrayMeta {
        name: "kernel_bank".into(),
        shape: vec![data.len()],
        level: None,
        channels: "kernel-bank".into(),
        sample: None,
        segments: Some(segments),
    };
    w.add_f64(meta, data.iter())?;
    w.finish()?;
    Ok(dir)
}

/// Arrays written per sample by [`cmd_gen_dataset`].
pub fn arrays_per_sample(levels: usize) -> usize {
    2 + 3 * levels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::mlfd::MlfdDataset;

    fn small() -> RunConfig {
        RunConfig::from_toml("[hierarchy]\nlevels = 3\n[afem]\niterations = 1\n[sampling]\ncount = 2").unwrap()
    }

    #[test]
    fn single_iteration_run_emits_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let hist = cmd_run(&small(), dir.path()).unwrap();
        assert_eq!(hist.len(), 1);
        let csv = fs::read_to_string(dir.path().join(RUN_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("iteration,dofs,eta2_total,h1_rel_err,l2_rel_err,marked,sweeps\n"));
        MlfdDataset::open(&dir.path().join(SNAPSHOT_DIR)).unwrap();
    }

    #[test]
    fn dataset_manifest_counts_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let config = small();
        let path = cmd_gen_dataset(&config, dir.path(), 2).unwrap();
        let d = MlfdDataset::open(&path).unwrap();
        assert_eq!(d.manifest.arrays.len(), 2 * arrays_per_sample(3) + 1);
        assert_eq!(d.manifest.config_hash, config.hash());
        // reload matches a fresh run bit for bit
        let g = config.hierarchy().unwrap();
        let y = &d.manifest.samples[1].parameters;
        let s = Sample::new(&config, &g, y).unwrap();
        let o = afem(&s.disc, &config.afem_config(), None, |_| Ok(())).unwrap();
        let u2 = d.read_f64("sample00001/u/2").unwrap();
        assert!(u2.iter().zip(o.u.level(2).iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let bank = d.read_f64("kernel_bank").unwrap();
        assert_eq!(bank, StencilBank::build(&g).to_flat().0);
    }
}
