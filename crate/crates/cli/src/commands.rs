use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use llp_core::bagging::{self, BagStructure};
use llp_core::bp::{self, BpConfig};
use llp_core::data::{self, DataSplit, LabeledDataset};
use llp_core::gibbs::IsingModel;
use llp_core::metrics;
use llp_core::mlp::MlpModel;
use llp_core::pipeline::{self, IterationReport, PipelineConfig};
use serde_json::json;

use crate::args::{
    BagsArgs, BpArgs, DataArgs, EvalArgs, GridArgs, ModelSource, PipelineArgs, StabilityArgs,
    SynthArgs,
};
use crate::manifest::{DataSpec, RunManifest, Seeds};

pub fn synth(a: SynthArgs) -> Result<()> {
    let ds = data::make_synthetic(a.m, a.d, a.separation, a.seed)?;
    data::write_csv(&ds, &a.out)?;
    println!("wrote {} rows to {}", ds.len(), a.out.display());
    Ok(())
}

/// A dataset with its split and training bags.
struct Prepared {
    ds: LabeledDataset,
    split: DataSplit,
    bags: BagStructure,
    spec: DataSpec,
    seeds: Seeds,
}

fn prepare(a: &DataArgs) -> Result<Prepared> {
    let path = a
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("--data is required"))?;
    let ds = data::load_csv(path, Some(&a.labels_col))
        .with_context(|| format!("loading {}", path.display()))?;
    let seeds = Seeds::from_base(a.seed);
    let (split, bags) = match &a.bags_dir {
        Some(dir) => read_bags_dir(dir)?,
        None => {
            let bag_size = a
                .bag_size
                .ok_or_else(|| anyhow!("--bag-size or --bags-dir is required"))?;
            let split = data::split(ds.len(), a.split, seeds.split_seed)?;
            let bags =
                bagging::generate_bags(&split.train, bag_size, ds.labels()?, seeds.bag_seed)?;
            (split, bags)
        }
    };
    split.validate(ds.len())?;
    let spec = DataSpec {
        path: path.clone(),
        labels_col: a.labels_col.clone(),
        split: a.split,
        bag_size: a.bag_size,
        bags_dir: a.bags_dir.clone(),
        num_rows: ds.len(),
        num_train: split.train.len(),
        num_bags: bags.len(),
    };
    Ok(Prepared {
        ds,
        split,
        bags,
        spec,
        seeds,
    })
}

fn read_bags_dir(dir: &Path) -> Result<(DataSplit, BagStructure)> {
    let (bags, counts) = bagging::read_bag_files(dir.join("bags.csv"), dir.join("counts.csv"))?;
    let split_path = dir.join("split.json");
    let split: DataSplit = serde_json::from_str(
        &fs::read_to_string(&split_path)
            .with_context(|| format!("reading {}", split_path.display()))?,
    )
    .with_context(|| format!("parsing {}", split_path.display()))?;
    let counts = counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| {
            ensure!(
                c >= 0.0 && c.fract() == 0.0,
                "bag {b} has non-integer count {c}; add noise with --dp-epsilon instead"
            );
            Ok(c as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    let bag_size = bags.iter().map(Vec::len).max().unwrap_or(0);
    let bs = BagStructure {
        bags,
        counts,
        bag_size,
    };
    bs.validate()?;
    Ok((split, bs))
}

pub fn bags(a: BagsArgs) -> Result<()> {
    ensure!(
        a.data.bags_dir.is_none(),
        "--bags-dir is an input of other commands, not of `bags`"
    );
    let p = prepare(&a.data)?;
    fs::create_dir_all(&a.out_dir)?;
    bagging::write_bag_files(
        &p.bags.bags,
        &p.bags.counts_f64(),
        a.out_dir.join("bags.csv"),
        a.out_dir.join("counts.csv"),
    )?;
    fs::write(
        a.out_dir.join("split.json"),
        serde_json::to_string(&p.split)? + "\n",
    )?;
    println!(
        "{} bags of size {} over {} training rows ({} unbagged)",
        p.bags.len(),
        p.bags.bag_size,
        p.split.train.len(),
        p.bags.unbagged(&p.split.train).len()
    );
    Ok(())
}

/// The model to analyse plus the dataset row of each variable, if any.
fn load_model(
    src: &ModelSource,
) -> Result<(IsingModel, Option<Vec<usize>>, Option<PipelineConfig>)> {
    if let (Some(nodes), Some(pairs)) = (&src.nodes, &src.pairs) {
        return Ok((IsingModel::read_csv(nodes, pairs)?, None, None));
    }
    let p = prepare(&src.data)?;
    let cfg = src.stage.resolve(src.data.seed)?;
    let model = pipeline::initial_model(&p.ds, &p.split, &p.bags, &cfg)?;
    Ok((model, Some(p.split.train), Some(cfg)))
}

pub fn bp(a: BpArgs) -> Result<()> {
    let (model, ids, cfg) = load_model(&a.source)?;
    let mut bp_cfg = cfg.map_or_else(BpConfig::default, |c| c.stage(0).bp);
    if let Some(t) = a.source.stage.t {
        bp_cfg.max_rounds = t;
    }
    if let Some(d) = a.source.stage.damping {
        bp_cfg.damping = d;
    }
    if let Some(tol) = a.tolerance {
        bp_cfg.tolerance = tol;
    }
    fs::create_dir_all(&a.out_dir)?;
    if a.write_model {
        model.write_csv(a.out_dir.join("nodes.csv"), a.out_dir.join("pairs.csv"))?;
    }
    let diag = if a.max_product {
        let (labels, diag) = bp::max_product(&model, &bp_cfg)?;
        let path = a.out_dir.join("map.csv");
        let mut w = csv_writer(&path)?;
        writeln!(w, "instance_index,y")?;
        for (p, y) in labels.iter().enumerate() {
            writeln!(w, "{},{y}", ids.as_ref().map_or(p, |ids| ids[p]))?;
        }
        diag
    } else {
        let (marginals, diag) = bp::sum_product(&model, &bp_cfg)?;
        marginals.write_csv_with_ids(ids.as_deref(), a.out_dir.join("marginals.csv"))?;
        diag
    };
    let mooij = bp::mooij_contraction_check(&model);
    let stability = if a.spectral_norm {
        Some(bp::linearized_stability(&model, 500)?)
    } else {
        None
    };
    let report = json!({
        "rounds_run": diag.rounds_run,
        "max_message_delta": diag.max_message_delta,
        "converged": diag.converged,
        "mooij": mooij,
        "spectral_norm": stability.map(|s| s.spectral_norm),
        "num_vars": model.num_vars(),
        "num_pairs": model.couplings().len(),
    });
    fs::write(
        a.out_dir.join("diagnostics.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    println!(
        "{} rounds, converged={}, mooij={:.4}",
        diag.rounds_run, diag.converged, mooij.value
    );
    Ok(())
}

pub fn stability(a: StabilityArgs) -> Result<()> {
    let (model, _, _) = load_model(&a.source)?;
    let lin = bp::linearized_stability(&model, a.power_iters)?;
    let mooij = bp::mooij_contraction_check(&model);
    let beta = if lin.beta_threshold.is_finite() {
        json!(lin.beta_threshold)
    } else {
        json!("inf")
    };
    let report = json!({
        "spectral_norm": lin.spectral_norm,
        "beta_threshold": beta,
        "power_iterations": lin.iterations,
        "mooij": mooij,
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("stability.json"), text.clone() + "\n")?;
    }
    println!("{text}");
    Ok(())
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

/// Resolves data and config either from flags or from a previous manifest.
fn resolve_run(a: &PipelineArgs) -> Result<(Prepared, PipelineConfig)> {
    match &a.manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            let data_args = DataArgs {
                data: Some(m.data.path.clone()),
                labels_col: m.data.labels_col.clone(),
                split: m.data.split,
                bag_size: m.data.bag_size,
                bags_dir: m.data.bags_dir.clone(),
                seed: m.seeds.seed,
            };
            Ok((prepare(&data_args)?, m.config))
        }
        None => {
            let p = prepare(&a.data)?;
            let cfg = a.stage.resolve(a.data.seed)?;
            Ok((p, cfg))
        }
    }
}

fn write_metrics(path: &Path, reports: &[IterationReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    writeln!(
        w,
        "iteration,pseudo_label_auroc,val_auroc,test_auroc,bp_rounds,bp_converged,setup_s,bp_s,train_s,total_s"
    )?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            opt(r.pseudo_label_auroc),
            r.val_auroc,
            opt(r.test_auroc),
            r.bp.rounds_run,
            r.bp.converged,
            r.timings.setup_s,
            r.timings.bp_s,
            r.timings.train_s,
            r.timings.total_s
        )?;
    }
    Ok(())
}

pub fn pipeline(a: PipelineArgs) -> Result<()> {
    let (p, cfg) = resolve_run(&a)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "pipeline".into(),
        data: p.spec.clone(),
        seeds: p.seeds,
        config: cfg.clone(),
        reports: Vec::new(),
        baseline: None,
        error: None,
    };
    let out = match pipeline::run(&p.ds, &p.split, &p.bags, &cfg) {
        Ok(out) => out,
        Err(e) => {
            manifest.reports = e.partial.clone();
            manifest.error = Some(e.to_string());
            manifest.save(&a.out_dir.join("manifest.json"))?;
            write_metrics(&a.out_dir.join("metrics.csv"), &e.partial)?;
            return Err(e.into());
        }
    };
    for (r, art) in out.artifacts.iter().enumerate() {
        art.marginals.write_csv_with_ids(
            Some(&art.variables),
            a.out_dir.join(format!("marginals_iter{r}.csv")),
        )?;
        art.pseudo_labels.write_csv(
            Some(&art.variables),
            a.out_dir.join(format!("pseudo_labels_iter{r}.csv")),
        )?;
        art.model
            .save_json(a.out_dir.join(format!("model_iter{r}.json")))?;
        art.train_log
            .write_csv(a.out_dir.join(format!("train_log_iter{r}.csv")))?;
    }
    write_metrics(&a.out_dir.join("metrics.csv"), &out.reports)?;
    manifest.reports = out.reports.clone();
    manifest.save(&a.out_dir.join("manifest.json"))?;
    for r in &out.reports {
        println!(
            "iteration {}: pseudo_label_auroc={} val_auroc={:.4} test_auroc={}",
            r.iteration,
            r.pseudo_label_auroc
                .map_or("-".into(), |v| format!("{v:.4}")),
            r.val_auroc,
            r.test_auroc.map_or("-".into(), |v| format!("{v:.4}")),
        );
    }
    Ok(())
}

pub fn dllp(a: PipelineArgs) -> Result<()> {
    let (p, cfg) = resolve_run(&a)?;
    fs::create_dir_all(&a.out_dir)?;
    let (model, log, report) = pipeline::run_dllp(&p.ds, &p.split, &p.bags, &cfg)?;
    model.save_json(a.out_dir.join("model_dllp.json"))?;
    log.write_csv(a.out_dir.join("train_log_dllp.csv"))?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "dllp".into(),
        data: p.spec,
        seeds: p.seeds,
        config: cfg,
        reports: Vec::new(),
        baseline: Some(report.clone()),
        error: None,
    };
    manifest.save(&a.out_dir.join("manifest.json"))?;
    println!(
        "dllp: val_auroc={:.4} test_auroc={}",
        report.val_auroc,
        report.test_auroc.map_or("-".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model = MlpModel::load_json(&a.model)?;
    let ds = data::load_csv(&a.data, Some(&a.labels_col))?;
    let (scores, rows) = match &a.manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            let split = match &m.data.bags_dir {
                Some(dir) => read_bags_dir(dir)?.0,
                None => data::split(ds.len(), m.data.split, m.seeds.split_seed)?,
            };
            let all = pipeline::score_dataset(&model, &ds, &split, m.config.standardize)?;
            let rows = split.test.clone();
            (rows.iter().map(|&i| all[i]).collect::<Vec<_>>(), rows)
        }
        None => {
            let rows: Vec<usize> = (0..ds.len()).collect();
            (model.score_rows(&ds.features, &rows)?, rows)
        }
    };
    if let Some(path) = &a.scores_out {
        let mut w = csv_writer(path)?;
        writeln!(w, "instance_index,score")?;
        for (i, s) in rows.iter().zip(&scores) {
            writeln!(w, "{i},{s}")?;
        }
    }
    let labels = ds.labels()?;
    let y: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
    let auroc = metrics::auroc(&scores, &y)?;
    println!("{}", json!({ "rows": rows.len(), "auroc": auroc }));
    Ok(())
}

fn parse_grid(specs: &[String]) -> Result<Vec<(String, Vec<String>)>> {
    specs
        .iter()
        .map(|s| {
            let (k, vs) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--grid expects KEY=V1,V2,..., got '{s}'"))?;
            let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).collect();
            ensure!(
                values.iter().all(|v| !v.is_empty()),
                "empty value in --grid {s}"
            );
            Ok((k.trim().to_string(), values))
        })
        .collect()
}

pub fn grid(a: GridArgs) -> Result<()> {
    let axes = parse_grid(&a.grid)?;
    let p = prepare(&a.data)?;
    let base = a.stage.resolve(a.data.seed)?;
    fs::create_dir_all(&a.out_dir)?;

    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let path = a.out_dir.join("grid.csv");
    let mut w = csv_writer(&path)?;
    let keys: Vec<&str> = axes.iter().map(|(k, _)| k.as_str()).collect();
    writeln!(w, "{},val_auroc,test_auroc,error", keys.join(","))?;
    let mut best: Option<(f64, Vec<String>)> = None;
    for n in 0..total {
        // mixed-radix decode of the combination index
        let mut rem = n;
        let mut combo = Vec::with_capacity(axes.len());
        for (_, values) in axes.iter().rev() {
            combo.push(values[rem % values.len()].clone());
            rem /= values.len();
        }
        combo.reverse();
        let mut cfg = base.clone();
        for ((k, _), v) in axes.iter().zip(&combo) {
            cfg.set(k, v)
                .with_context(|| format!("grid value {k}={v}"))?;
        }
        match pipeline::run(&p.ds, &p.split, &p.bags, &cfg) {
            Ok(out) => {
                let last = out.reports.last().expect("at least one iteration");
                writeln!(
                    w,
                    "{},{},{},",
                    combo.join(","),
                    last.val_auroc,
                    last.test_auroc.map_or(String::new(), |v| v.to_string())
                )?;
                if best.as_ref().is_none_or(|(b, _)| last.val_auroc > *b) {
                    best = Some((last.val_auroc, combo.clone()));
                }
            }
            Err(e) => writeln!(
                w,
                "{},,,{}",
                combo.join(","),
                e.to_string().replace(',', ";")
            )?,
        }
        w.flush()?;
    }
    match best {
        Some((v, combo)) => {
            let settings: Vec<String> = keys
                .iter()
                .zip(&combo)
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            println!("best val_auroc={v:.4} at {}", settings.join(" "));
            Ok(())
        }
        None => bail!("every grid point failed; see {}", path.display()),
    }
}
