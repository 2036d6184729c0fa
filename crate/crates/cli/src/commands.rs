use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use convgru::checks::gradcheck_suite;
use convgru::datapipe::{
    geometry_for, prepare_trial, prepare_trials, split, ClipBuilder, Dataset, PerturbationKind, PreparedTrial,
    SamplingScheme, WindowView, MANIFEST_FILE,
};
use convgru::models::{Architecture, Model, ModelConfig, Widths};
use convgru::recurrent::FusionMethod;
use convgru::synthgen::{generate_dataset, SynthSpec};
use convgru::trainer::{evaluate, robustness_eval, train as train_model, TrainData};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{CheckpointArgs, EvalArgs, FeatmapsArgs, GradcheckArgs, RobustnessArgs, SynthArgs, TraceArgs, TrainArgs};

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    if !(a.eps.is_finite() && a.eps > 0.0) || !(a.tol >= 0.0) {
        return Err(CliError::Usage("--eps must be positive and --tol non-negative".into()));
    }
    let results = gradcheck_suite(a.seed, a.eps)?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    println!("{:<width$}  {:>12}  {:>7}", "check", "max rel err", "coords");
    for r in &results {
        let verdict = if r.max_rel_error <= a.tol { "ok" } else { "FAIL" };
        println!("{:<width$}  {:>12.3e}  {:>7}  {verdict}", r.name, r.max_rel_error, r.checked);
    }
    let worst = results
        .iter()
        .max_by(|x, y| x.max_rel_error.total_cmp(&y.max_rel_error))
        .ok_or_else(|| CliError::Failed("the suite ran no checks".into()))?;
    println!("worst: {} ({:.3e})", worst.name, worst.max_rel_error);
    let failed = results.iter().filter(|r| !(r.max_rel_error <= a.tol)).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} checks exceed tolerance {:e}; worst is {} at {:.3e}",
            results.len(),
            a.tol,
            worst.name,
            worst.max_rel_error
        )));
    }
    println!("all {} checks within {:e}", results.len(), a.tol);
    Ok(())
}

pub fn synth(a: &SynthArgs, root: &Path) -> Result<(), CliError> {
    let spec = SynthSpec {
        mode: a.mode.parse().map_err(|e: convgru::Error| CliError::Usage(e.to_string()))?,
        resolution: a.res,
        trials_per_class: a.per_class as usize,
        participants: a.participants,
        planted_start: a.start,
        seed: a.seed,
        ..SynthSpec::default()
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = a.out.clone().unwrap_or_else(|| root.join(format!("synth-{}", spec.mode)));
    generate_dataset(&spec, &out)?;
    let ds = Dataset::open(&out)?;
    println!("wrote {} trials ({}) to {}", ds.len(), ds.manifest.name, out.display());
    Ok(())
}

fn parse_fusion(s: &str) -> Result<FusionMethod, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase().replace('-', "_")))
        .map_err(|_| CliError::Usage(format!("unknown fusion {s:?}; expected last_flat, mean_flat, last_avg or flat")))
}

fn parse_arch(s: &str) -> Result<Architecture, CliError> {
    s.parse().map_err(|e: convgru::Error| CliError::Usage(e.to_string()))
}

pub fn trace_shapes(a: &TraceArgs) -> Result<(), CliError> {
    let mut cfg = ModelConfig::new(parse_arch(&a.arch)?);
    cfg.input_size = a.input;
    cfg.widths = Widths::divided_by(a.width_divisor);
    if let Some(f) = &a.fusion {
        cfg.fusion = parse_fusion(f)?;
    }
    cfg.validate()?;
    let trace = cfg.shape_trace()?;
    println!("{} at {}x{} input", cfg.architecture.name(), a.input, a.input);
    println!("{trace}");
    Ok(())
}

fn open_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Dataset(format!("no {MANIFEST_FILE} under {}", path.display())));
    }
    Ok(Dataset::open(path)?)
}

fn load_checkpoint(a: &CheckpointArgs) -> Result<Model<f32>, CliError> {
    if !a.checkpoint.is_file() {
        return Err(CliError::Checkpoint(format!("{} does not exist", a.checkpoint.display())));
    }
    let model = Model::<f32>::load(&a.checkpoint)?;
    if let Some(arch) = &a.arch {
        let want = parse_arch(arch)?;
        let got = model.config().architecture;
        if want != got {
            return Err(CliError::Checkpoint(format!(
                "{} holds a {} model, not {}",
                a.checkpoint.display(),
                got.name(),
                want.name()
            )));
        }
    }
    Ok(model)
}

/// Model, test trials, clip builder and scheme for the checkpoint commands.
fn test_setup(a: &CheckpointArgs) -> Result<(Model<f32>, Dataset, Vec<PreparedTrial>, ClipBuilder, SamplingScheme), CliError> {
    let model = load_checkpoint(a)?;
    let scheme = SamplingScheme::table(a.scheme).map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = open_dataset(&a.data)?;
    let builder = builder_for(&ds, &model)?;
    let test = prepare_trials(&ds, &split(ds.entries(), a.split_seed).test, true)?;
    Ok((model, ds, test, builder, scheme))
}

fn builder_for(ds: &Dataset, model: &Model<f32>) -> Result<ClipBuilder, CliError> {
    let [w, h] = ds.manifest.resolution;
    let geometry = geometry_for(w, h, model.config().input_size as u32);
    geometry.validate(w, h).map_err(|e| {
        CliError::Checkpoint(format!("model input {} does not fit the dataset frames: {e}", model.config().input_size))
    })?;
    Ok(ClipBuilder::new(geometry, ds.manifest.normalization.clone()))
}

pub fn train(a: &TrainArgs, root: &Path) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(w) = a.workers {
        cfg.train.workers = w;
    }
    let out = cfg.out.clone().unwrap_or_else(|| root.join("train"));
    cfg.out = Some(out.clone());
    cfg.validate()?;
    let ds = open_dataset(cfg.data.as_deref().expect("validated"))?;
    fs::create_dir_all(&out).map_err(convgru::Error::from)?;
    let echo = serde_json::to_string_pretty(&cfg).map_err(convgru::Error::from)?;
    fs::write(out.join("config.json"), echo + "\n").map_err(convgru::Error::from)?;

    let data = TrainData::from_dataset(&ds, cfg.model.input_size, cfg.train.split_seed, cfg.train.cache_frames)?;
    log::info!("{} training and {} test trials", data.train.len(), data.test.len());
    let mut summary = String::from("run,best_epoch,best_test_acc,final_test_acc\n");
    let mut finals = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let (model_cfg, train_cfg) = cfg.for_run(r);
        let mut model = Model::<f32>::build(model_cfg)?;
        let report = train_model(&mut model, &data, &train_cfg, Some(&run_dir(&out, r)))?;
        let acc = report.final_eval.accuracy;
        println!(
            "run {r}: final test accuracy {acc:.6} (best {:.6} at epoch {})",
            report.best_test_acc.unwrap_or(acc),
            report.best_epoch.unwrap_or(report.metrics.len())
        );
        summary.push_str(&format!(
            "{r},{},{:.6},{acc:.6}\n",
            report.best_epoch.unwrap_or(0),
            report.best_test_acc.unwrap_or(acc)
        ));
        finals.push(acc);
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    summary.push_str(&format!("mean,,,{mean:.6}\n"));
    fs::write(out.join("summary.csv"), summary).map_err(convgru::Error::from)?;
    println!("mean final test accuracy over {} run(s): {mean:.6}", finals.len());
    Ok(())
}

pub fn run_dir(out: &Path, run: usize) -> PathBuf {
    out.join(format!("run{run}"))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (model, _, test, builder, scheme) = test_setup(&a.common)?;
    let e = evaluate(&model, &test, &builder, &scheme)?;
    println!("accuracy {:.6} ({}/{})", e.accuracy, e.correct, e.total);
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(convgru::Error::from)?;
        e.write_confusion_csv(&out.join("confusion.csv"))?;
    }
    Ok(())
}

/// `1..5`, `1..=5`, `0,2,4` or a single level.
pub fn parse_levels(s: &str) -> Result<Vec<u32>, CliError> {
    let bad = || CliError::Usage(format!("cannot read levels {s:?}; use a range like 1..5 or a list like 0,2,4"));
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| bad());
    let levels = if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi) = (num(lo)?, num(hi.trim_start_matches('='))?);
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if levels.is_empty() {
        return Err(bad());
    }
    Ok(levels)
}

pub fn robustness(a: &RobustnessArgs) -> Result<(), CliError> {
    let kind: PerturbationKind = a.kind.parse().map_err(|e: convgru::Error| CliError::Usage(e.to_string()))?;
    let levels = match &a.levels {
        Some(s) => parse_levels(s)?,
        None => kind.levels().collect(),
    };
    if a.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let (model, _, test, builder, scheme) = test_setup(&a.common)?;
    let report = robustness_eval(&model, &test, &builder, &scheme, kind, &levels, a.repeats, a.seed)?;
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(convgru::Error::from)?;
        let file = fs::File::create(out.join(format!("robustness_{kind}.csv"))).map_err(convgru::Error::from)?;
        report.write_csv(std::io::BufWriter::new(file))?;
    }
    let mut stdout = std::io::stdout().lock();
    let means = convgru::trainer::RobustnessReport {
        rows: report.means().into_iter().cloned().collect(),
    };
    means.write_csv(&mut stdout)?;
    stdout.flush().map_err(convgru::Error::from)?;
    Ok(())
}

pub fn featmaps(a: &FeatmapsArgs, root: &Path) -> Result<(), CliError> {
    let model = load_checkpoint(&a.common)?;
    let scheme = SamplingScheme::table(a.common.scheme).map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = open_dataset(&a.common.data)?;
    let builder = builder_for(&ds, &model)?;
    let matches: Vec<_> = ds
        .entries()
        .iter()
        .filter(|e| e.trial == a.trial || format!("{}/{}", e.participant, e.trial) == a.trial)
        .collect();
    let entry = match matches.as_slice() {
        [e] => *e,
        [] => return Err(CliError::Usage(format!("no trial {:?} in {}", a.trial, ds.root.display()))),
        _ => return Err(CliError::Usage(format!("trial {:?} is ambiguous; prefix the participant", a.trial))),
    };
    let trial = prepare_trial(&ds, entry, true)?;
    let clip = builder
        .test_clips(&trial, &scheme, &WindowView::plain())?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::Failed("the scheme produced no test clip".into()))?;
    let steps = clip.shape()[0];
    let frames = match &a.frames {
        Some(f) => f.clone(),
        None => {
            let mut f = vec![0, (steps - 1) / 2, steps - 1];
            f.dedup();
            f
        }
    };
    if let Some(&t) = frames.iter().find(|&&t| t >= steps) {
        return Err(CliError::Usage(format!("frame {t} of a {steps}-frame clip")));
    }
    let mut maps = Vec::new();
    if model.config().architecture.single_frame() {
        for &t in &frames {
            let frame = clip.index0(t)?;
            let mut shape = vec![1];
            shape.extend_from_slice(frame.shape());
            for mut m in model.export_feature_maps(&frame.reshape(&shape)?, &a.layer, &[0])? {
                m.frame = t;
                maps.push(m);
            }
        }
    } else {
        maps = model.export_feature_maps(&clip, &a.layer, &frames)?;
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| root.join("featmaps").join(format!("{}_{}", entry.participant, entry.trial)));
    fs::create_dir_all(&out).map_err(convgru::Error::from)?;
    for m in &maps {
        m.write_png(&out)?;
    }
    println!(
        "wrote {} {} maps for frames {frames:?} of {}/{} to {}",
        maps.len(),
        a.layer,
        entry.participant,
        entry.trial,
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_accept_ranges_and_lists() {
        assert_eq!(parse_levels("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_levels("0..=2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_levels("0,2, 4").unwrap(), vec![0, 2, 4]);
        assert_eq!(parse_levels("3").unwrap(), vec![3]);
        for bad in ["", "5..1", "a", "1..x"] {
            assert!(parse_levels(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn fusion_names() {
        assert_eq!(parse_fusion("mean-flat").unwrap(), FusionMethod::MeanFlat);
        assert_eq!(parse_fusion("LAST_AVG").unwrap(), FusionMethod::LastAvg);
        assert!(parse_fusion("max").is_err());
    }
}
