use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use fewshot_stack::ensemble::stacked_channels;
use fewshot_stack::episodic::{
    ablation_grid, all_subsets, cross_validate, fit_episode, k_sweep, sample_episode, AblationSettings, EvalReport,
};
use fewshot_stack::head::{count_params, HeadConfig, Precision};
use fewshot_stack::reporting::{emit_report, render_confusion, tsne_embed, EmbeddingPoint, SweepReport, TsneConfig};
use fewshot_stack::synth::{clustered_stores, SynthSpec};
use fewshot_stack::{join, read_fsf, write_fsf, FeatureStore, JoinMode, JoinedDataset, Real, Result};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::args::RunArgs;
use crate::manifest::{now, RunManifest};
use crate::settings::{parse_subset, parse_widths, resolve, FileConfig, Resolved};

fn load_stores(paths: &[PathBuf]) -> Result<Vec<FeatureStore>> {
    paths
        .iter()
        .map(|p| {
            info!("reading {}", p.display());
            read_fsf(p)
        })
        .collect()
}

fn load_dataset(paths: &[PathBuf], lenient: bool) -> Result<JoinedDataset> {
    let mode = if lenient { JoinMode::Lenient } else { JoinMode::Strict };
    join(&load_stores(paths)?, mode)
}

/// Label names for a pooled confusion matrix: class names when every episode
/// uses all classes, otherwise positional labels.
fn label_names(dataset: &JoinedDataset, n_way: usize) -> Vec<String> {
    if dataset.n_classes() == n_way {
        dataset.class_names.clone()
    } else {
        (0..n_way).map(|i| format!("label-{i}")).collect()
    }
}

fn config_value(resolved: &Resolved, extra: Value) -> Value {
    let mut v = serde_json::to_value(resolved).expect("config serializes");
    if let (Some(obj), Value::Object(extra)) = (v.as_object_mut(), extra) {
        obj.extend(extra);
    }
    v
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Fills in the side, widths, channels and classes of the resolved head.
fn concrete_head(resolved: &Resolved, dataset: &JoinedDataset, side: usize, hidden: Vec<usize>) -> Result<HeadConfig> {
    let head = HeadConfig {
        input_side: side,
        input_channels: stacked_channels(dataset.dim(), side)?,
        hidden_sizes: hidden,
        n_classes: resolved.spec.n_way,
        ..resolved.head.clone()
    };
    head.validate()?;
    Ok(head)
}

pub fn validate(paths: &[PathBuf]) -> ExitCode {
    let mut stores = Vec::new();
    let mut failed = false;
    for p in paths {
        match read_fsf(p) {
            Ok(s) => {
                let counts: Vec<String> = s.class_counts().iter().map(|c| c.to_string()).collect();
                println!(
                    "{}: ok, backbone {}, dim {}, {} records, {} classes (per class {})",
                    p.display(),
                    s.backbone_name,
                    s.dim,
                    s.records.len(),
                    s.class_names.len(),
                    counts.join(",")
                );
                stores.push(s);
            }
            Err(e) => {
                println!("{}: error: {e}", p.display());
                failed = true;
            }
        }
    }
    if failed {
        return ExitCode::from(1);
    }
    match join(&stores, JoinMode::Strict) {
        Ok(d) => {
            println!("joinable, total dim {}, {} items", d.dim(), d.items.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("not joinable: {e}");
            ExitCode::from(1)
        }
    }
}

pub fn eval(run: &RunArgs, reshape: Option<usize>, hidden: Option<Vec<usize>>, save_head: Option<&Path>) -> Result<()> {
    let started = now();
    let file = FileConfig::load(run.config.as_deref())?;
    let resolved = resolve(run, &file)?;
    let side = reshape.or(file.single_reshape()?).unwrap_or(resolved.head.input_side);
    let hidden = hidden.or(file.single_hidden()?).unwrap_or_else(|| resolved.head.hidden_sizes.clone());
    let dataset = load_dataset(&run.features, resolved.lenient)?;
    let head = concrete_head(&resolved, &dataset, side, hidden)?;
    let resolved = Resolved { head: head.clone(), ..resolved };
    prepare_out(&run.out)?;

    info!("evaluating {} episodes", resolved.episodes);
    let report = cross_validate(
        &dataset,
        &resolved.spec,
        &head,
        &resolved.train,
        resolved.episodes,
        resolved.jobs,
    )?;
    println!(
        "accuracy mean {} std {} over {} episodes",
        fewshot_stack::reporting::sig6(report.mean),
        fewshot_stack::reporting::sig6(report.std),
        resolved.episodes
    );
    let mut outputs = write_eval(&run.out, "report", "confusion.txt", &report, &dataset, &resolved)?;

    if let Some(path) = save_head {
        let mut rng = ChaCha8Rng::seed_from_u64(resolved.spec.seed);
        match resolved.train.precision {
            Precision::F32 => fit_episode::<f32, _>(&dataset, &resolved.spec, &head, &resolved.train, &mut rng)?
                .head
                .params
                .save(path)?,
            Precision::F64 => fit_episode::<f64, _>(&dataset, &resolved.spec, &head, &resolved.train, &mut rng)?
                .head
                .params
                .save(path)?,
        }
        outputs.push(path.to_path_buf());
    }
    let extra = json!({ "features": run.features, "save_head": save_head });
    RunManifest::new("eval", resolved.seed, config_value(&resolved, extra), &run.features, started)?
        .finish(&run.out, &outputs)?;
    Ok(())
}

fn write_eval(
    dir: &Path,
    stem: &str,
    confusion_file: &str,
    report: &EvalReport,
    dataset: &JoinedDataset,
    resolved: &Resolved,
) -> Result<Vec<PathBuf>> {
    let report_path = dir.join(format!("{stem}.{}", resolved.format.extension()));
    emit_report(report, &report_path, resolved.format)?;
    let confusion_path = dir.join(confusion_file);
    fs::write(
        &confusion_path,
        render_confusion(&report.confusion, &label_names(dataset, resolved.spec.n_way))?,
    )?;
    Ok(vec![report_path, confusion_path])
}

pub fn sweep(run: &RunArgs, reshape: Option<usize>, hidden: Option<Vec<usize>>, ks: &[usize]) -> Result<()> {
    let started = now();
    let file = FileConfig::load(run.config.as_deref())?;
    let resolved = resolve(run, &file)?;
    let side = reshape.or(file.single_reshape()?).unwrap_or(resolved.head.input_side);
    let hidden = hidden.or(file.single_hidden()?).unwrap_or_else(|| resolved.head.hidden_sizes.clone());
    let dataset = load_dataset(&run.features, resolved.lenient)?;
    let head = concrete_head(&resolved, &dataset, side, hidden)?;
    let resolved = Resolved { head: head.clone(), ..resolved };
    prepare_out(&run.out)?;

    let results = k_sweep(
        &dataset,
        ks,
        &resolved.spec,
        &head,
        &resolved.train,
        resolved.episodes,
        resolved.jobs,
    )?;
    let path = run.out.join(format!("sweep.{}", resolved.format.extension()));
    emit_report(&SweepReport(&results), &path, resolved.format)?;
    let mut outputs = vec![path];
    let names = label_names(&dataset, resolved.spec.n_way);
    for (k, r) in &results {
        println!(
            "k={k}: accuracy mean {} std {}",
            fewshot_stack::reporting::sig6(r.mean),
            fewshot_stack::reporting::sig6(r.std)
        );
        let p = run.out.join(format!("confusion_k{k}.txt"));
        fs::write(&p, render_confusion(&r.confusion, &names)?)?;
        outputs.push(p);
    }
    let extra = json!({ "features": run.features, "k_values": ks });
    RunManifest::new("sweep", resolved.seed, config_value(&resolved, extra), &run.features, started)?
        .finish(&run.out, &outputs)?;
    Ok(())
}

pub fn ablate(run: &RunArgs, reshape: Option<Vec<usize>>, hidden: &[String], subsets: &[String]) -> Result<()> {
    let started = now();
    let file = FileConfig::load(run.config.as_deref())?;
    let resolved = resolve(run, &file)?;
    let stores = load_stores(&run.features)?;
    let names: Vec<String> = stores.iter().map(|s| s.backbone_name.clone()).collect();
    let subsets: Vec<Vec<usize>> = if subsets.is_empty() {
        all_subsets(stores.len())
    } else {
        subsets.iter().map(|s| parse_subset(s, &names)).collect::<Result<_>>()?
    };
    let sides = reshape
        .or(file.reshape_sides())
        .unwrap_or_else(|| vec![resolved.head.input_side]);
    let structures: Vec<Vec<usize>> = if hidden.is_empty() {
        file.hidden_structures()
            .unwrap_or_else(|| vec![resolved.head.hidden_sizes.clone()])
    } else {
        hidden.iter().map(|h| parse_widths(h)).collect::<Result<_>>()?
    };
    prepare_out(&run.out)?;

    let settings = AblationSettings {
        spec: resolved.spec,
        head: resolved.head.clone(),
        train: resolved.train.clone(),
        n_episodes: resolved.episodes,
        jobs: resolved.jobs,
    };
    let cells = ablation_grid(&stores, &subsets, &sides, &structures, &settings)?;
    let path = run.out.join(format!("ablation.{}", resolved.format.extension()));
    emit_report(cells.as_slice(), &path, resolved.format)?;
    println!("{} cells written to {}", cells.len(), path.display());
    let subset_names: Vec<Vec<&str>> = subsets
        .iter()
        .map(|s| s.iter().map(|&i| names[i].as_str()).collect())
        .collect();
    let extra = json!({
        "features": run.features,
        "subsets": subset_names,
        "reshape_sides": sides,
        "mlp_structures": structures,
    });
    RunManifest::new("ablate", resolved.seed, config_value(&resolved, extra), &run.features, started)?
        .finish(&run.out, &[path])?;
    Ok(())
}

fn to_rows<T: Real>(m: &ndarray::Array2<T>) -> Vec<Vec<f64>> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect()
}

pub struct TsneArgs {
    pub reshape: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub raw_features: bool,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
}

pub fn tsne(run: &RunArgs, args: TsneArgs) -> Result<()> {
    let started = now();
    let file = FileConfig::load(run.config.as_deref())?;
    let resolved = resolve(run, &file)?;
    let dataset = load_dataset(&run.features, resolved.lenient)?;
    let defaults = TsneConfig::default();
    let tsne_config = TsneConfig {
        perplexity: args.perplexity.or(file.perplexity).unwrap_or(defaults.perplexity),
        iterations: args.iterations.or(file.iterations).unwrap_or(defaults.iterations),
        seed: resolved.seed,
        ..defaults
    };
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.spec.seed);

    let (episode, points, resolved) = if args.raw_features {
        let episode = sample_episode(&dataset, &resolved.spec, &mut rng)?;
        let points: Vec<Vec<f64>> = episode
            .query
            .iter()
            .map(|it| dataset.items[it.index].features.iter().map(|&v| v as f64).collect())
            .collect();
        (episode, points, resolved)
    } else {
        let side = args.reshape.or(file.single_reshape()?).unwrap_or(resolved.head.input_side);
        let hidden = args
            .hidden
            .or(file.single_hidden()?)
            .unwrap_or_else(|| resolved.head.hidden_sizes.clone());
        let head = concrete_head(&resolved, &dataset, side, hidden)?;
        let resolved = Resolved { head: head.clone(), ..resolved };
        let (episode, points) = match resolved.train.precision {
            Precision::F32 => embed_query::<f32>(&dataset, &resolved, &head, &mut rng)?,
            Precision::F64 => embed_query::<f64>(&dataset, &resolved, &head, &mut rng)?,
        };
        (episode, points, resolved)
    };

    prepare_out(&run.out)?;
    let embedding = tsne_embed(&points, &tsne_config)?;
    let out: Vec<EmbeddingPoint> = episode
        .query
        .iter()
        .zip(&embedding.coords)
        .map(|(it, c)| EmbeddingPoint {
            x: c[0],
            y: c[1],
            label: it.label,
            class_name: dataset.class_names[episode.classes[it.label]].clone(),
            key: it.key,
        })
        .collect();
    let path = run.out.join(format!("embedding.{}", resolved.format.extension()));
    emit_report(out.as_slice(), &path, resolved.format)?;
    println!(
        "{} points embedded, KL {} -> {}",
        out.len(),
        fewshot_stack::reporting::sig6(embedding.initial_kl),
        fewshot_stack::reporting::sig6(embedding.final_kl)
    );
    let extra = json!({
        "features": run.features,
        "raw_features": args.raw_features,
        "tsne": {
            "perplexity": tsne_config.perplexity,
            "effective_perplexity": embedding.perplexity,
            "iterations": tsne_config.iterations,
            "learning_rate": tsne_config.learning_rate,
            "early_exaggeration": tsne_config.early_exaggeration,
            "exaggeration_iters": tsne_config.exaggeration_iters,
        },
    });
    RunManifest::new("tsne", resolved.seed, config_value(&resolved, extra), &run.features, started)?
        .finish(&run.out, &[path])?;
    Ok(())
}

fn embed_query<T: Real>(
    dataset: &JoinedDataset,
    resolved: &Resolved,
    head: &HeadConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(fewshot_stack::episodic::Episode, Vec<Vec<f64>>)> {
    let fitted = fit_episode::<T, _>(dataset, &resolved.spec, head, &resolved.train, rng)?;
    let query = fitted.episode.stacked(dataset, &fitted.episode.query, head.input_side)?;
    let inputs: Vec<_> = query.iter().map(|(t, _)| t).collect();
    let activations = fitted.head.params.embed(&inputs)?;
    Ok((fitted.episode, to_rows(&activations)))
}

pub fn params(dim: usize, side: usize, filters: usize, hidden: Vec<usize>, ways: usize, backbones: &[String]) -> Result<()> {
    let config = HeadConfig {
        input_side: side,
        input_channels: stacked_channels(dim, side)?,
        conv_filters: filters,
        hidden_sizes: hidden,
        n_classes: ways,
        ..HeadConfig::default()
    };
    config.validate()?;
    let count = count_params(&config, backbones);
    let width = count.layers.iter().map(|l| l.name.len()).max().unwrap_or(0).max(5);
    println!("{:<width$}  {:>12}  {:>12}", "layer", "output", "params");
    for l in &count.layers {
        println!("{:<width$}  {:>12}  {:>12}", l.name, l.output_shape, l.trainable);
    }
    println!("trainable {}", count.trainable);
    println!("non-trainable {}", count.non_trainable);
    for (name, frozen) in &count.frozen_backbones {
        match frozen {
            Some(n) => println!("frozen {name} {n}"),
            None => println!("frozen {name} unknown"),
        }
    }
    Ok(())
}

pub fn synth(out: &Path, spec: SynthSpec) -> Result<()> {
    let stores = clustered_stores(&spec)?;
    fs::create_dir_all(out)?;
    for s in &stores {
        let path = out.join(format!("{}.fsf", s.backbone_name));
        write_fsf(s, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}
