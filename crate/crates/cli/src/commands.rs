use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::{Deserialize, Serialize};
use serde_json::json;

use dualpt_core::alignment::{AlignmentMode, ClassDescriptors, ContextBank, LossBreakdown};
use dualpt_core::descriptions::{
    embed_descriptions, fetch_descriptions, ClientConfig, DescriptionCache, EmbeddingStore,
    HttpTransport, MockEncoder, MockTransport, QueryRecord,
};
use dualpt_core::harness::{
    ablate, base_to_new_split, evaluate_base_to_new, evaluate_fewshot, generate_synthetic,
    read_dataset, select_classes, shots_in, to_csv, train, write_dataset, AblationGrid,
    SyntheticConfig, TrainConfig,
};
use dualpt_core::io::{read_json, read_text, write_atomic, write_json};
use dualpt_core::numerics::{cosine_self, EmbeddingMatrix, Matrix, ProbVector};
use dualpt_core::sample::Sample;
use dualpt_core::transport::{
    fused_cost, gwd_cost, sinkhorn, solve_assignment, wd_cost, SinkhornConfig, TransportPlan,
};
use dualpt_core::{Error, Result};

use crate::args::*;
use crate::manifest::{manifest_path_for, DirLock, RunManifest};

pub fn run(command: Command, matches: &ArgMatches) -> Result<()> {
    let sub = matches.subcommand().map(|(_, m)| m);
    match command {
        Command::GenQueries(a) => gen_queries(&a),
        Command::Fetch(a) => fetch(&a),
        Command::Embed(a) => embed(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => cmd_train(&a, sub),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => cmd_ablate(&a, sub),
        Command::SolveOt(a) => solve_ot(&a),
        Command::Replay(a) => replay(&a),
    }
}

fn alpha_given(matches: Option<&ArgMatches>) -> bool {
    matches.and_then(|m| m.value_source("alpha")) == Some(ValueSource::CommandLine)
}

fn warn_ignored_alpha(modes: &[AlignmentMode], matches: Option<&ArgMatches>) {
    if !alpha_given(matches) {
        return;
    }
    for mode in modes.iter().filter(|m| !m.uses_alpha()) {
        eprintln!("warning: {mode} alignment ignores --alpha");
    }
}

fn read_class_list(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no classes in {}",
            path.display()
        )));
    }
    Ok(names)
}

fn class_names(path: Option<&Path>, store: Option<&EmbeddingStore>) -> Result<Vec<String>> {
    match (path, store) {
        (Some(p), _) => read_class_list(p),
        (None, Some(s)) => Ok(s.class_names()),
        (None, None) => Err(Error::InvalidConfig(
            "need --classes or --store to name the dataset labels".into(),
        )),
    }
}

fn positions(all: &[String], wanted: &[String]) -> Vec<usize> {
    wanted
        .iter()
        .filter_map(|n| all.iter().position(|c| c == n))
        .collect()
}

fn check_labels(samples: &[Sample], classes: usize, path: &Path) -> Result<()> {
    match samples.iter().position(|s| s.label >= classes) {
        Some(i) => Err(Error::Schema {
            pointer: format!("/{i}/label"),
            message: format!(
                "label {} in {} but only {classes} classes are named",
                samples[i].label,
                path.display()
            ),
        }),
        None => Ok(()),
    }
}

fn gen_queries(a: &GenQueriesArgs) -> Result<()> {
    let names = read_class_list(&a.classes)?;
    let records = names
        .iter()
        .map(|n| QueryRecord::new(n))
        .collect::<Result<Vec<_>>>()?;
    write_json(&a.out, &records)?;
    println!("wrote {} queries to {}", records.len(), a.out.display());
    Ok(())
}

fn fetch(a: &FetchArgs) -> Result<()> {
    let names = read_class_list(&a.classes)?;
    let cfg = ClientConfig {
        endpoint: a.endpoint.clone(),
        model: a.model.clone(),
        temperature: a.temperature,
        retry: !a.no_retry,
        concurrency: a.concurrency,
        timeout_secs: a.timeout,
    };
    let _lock = DirLock::for_file(&a.cache)?;
    RunManifest::new("fetch", serde_json::to_value(&cfg)?, None)
        .inputs(&[&a.classes])
        .outputs(&[&a.cache])
        .write(&manifest_path_for(&a.cache))?;
    let (_, summary) = if a.mock {
        fetch_descriptions(&names, &cfg, &MockTransport::new(), &a.cache)?
    } else {
        fetch_descriptions(&names, &cfg, &HttpTransport::from_env(&cfg), &a.cache)?
    };
    println!("{} fetched, {} cached", summary.fetched, summary.cached);
    Ok(())
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let cache = DescriptionCache::load(&a.cache)?;
    let encoder = MockEncoder::new(a.dim, a.seed)?;
    let _lock = DirLock::for_file(&a.out)?;
    RunManifest::new(
        "embed",
        json!({"dim": a.dim, "encoder": "mock"}),
        Some(a.seed),
    )
    .inputs(&[&a.cache])
    .outputs(&[&a.out])
    .write(&manifest_path_for(&a.out))?;
    let store = embed_descriptions(&cache, &encoder)?;
    store.save(&a.out)?;
    println!(
        "embedded {} classes into {}",
        store.classes.len(),
        a.out.display()
    );
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        classes: a.num_classes,
        parts_per_class: a.parts,
        tokens: a.tokens,
        dim: a.dim,
        noise_sigma: a.noise_sigma,
        descriptor_noise: a.descriptor_noise,
        shots_train: a.shots.clone(),
        test_per_class: a.test_per_class,
        background_parts: a.background_parts,
        descriptors_per_part: a.descriptors_per_part,
        seed: a.seed,
    };
    cfg.validate()?;
    let _lock = DirLock::acquire(&a.out)?;
    let train_paths: Vec<PathBuf> = cfg
        .shots_train
        .iter()
        .map(|s| a.out.join(format!("train_{s}.jsonl")))
        .collect();
    let (test_path, store_path, classes_path) = (
        a.out.join("test.jsonl"),
        a.out.join("store.json"),
        a.out.join("classes.txt"),
    );
    let mut outputs: Vec<&Path> = train_paths.iter().map(PathBuf::as_path).collect();
    outputs.extend([test_path.as_path(), &store_path, &classes_path]);
    RunManifest::new("synth", serde_json::to_value(&cfg)?, Some(cfg.seed))
        .outputs(&outputs)
        .write(&a.out.join("manifest.json"))?;

    let data = generate_synthetic(&cfg)?;
    for (path, s) in train_paths.iter().zip(&cfg.shots_train) {
        write_dataset(path, &data.train[s])?;
    }
    write_dataset(&test_path, &data.test)?;
    data.store.save(&store_path)?;
    write_atomic(
        &classes_path,
        (data.class_names.join("\n") + "\n").as_bytes(),
    )?;
    println!(
        "wrote {} train splits, {} test samples and {} classes to {}",
        train_paths.len(),
        data.test.len(),
        data.class_names.len(),
        a.out.display()
    );
    Ok(())
}

/// Output of `train`: the learned context with the anchors it was trained
/// against and everything needed to score it again.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    classes: Vec<String>,
    shots: usize,
    epochs: usize,
    config: TrainConfig,
    bank: ContextBank,
    history: Vec<LossBreakdown>,
}

fn subset_of(names: &[String], subset: Subset) -> Result<Vec<String>> {
    Ok(match subset {
        Subset::All => names.to_vec(),
        Subset::Base => base_to_new_split(names)?.0,
        Subset::New => base_to_new_split(names)?.1,
    })
}

fn cmd_train(a: &TrainArgs, matches: Option<&ArgMatches>) -> Result<()> {
    let cfg = a.config()?;
    warn_ignored_alpha(&[cfg.objective.align], matches);
    let store = EmbeddingStore::load(&a.store)?;
    let all = class_names(a.classes.as_deref(), Some(&store))?;
    let samples = read_dataset(&a.train)?;
    check_labels(&samples, all.len(), &a.train)?;
    let names = subset_of(&all, a.subset)?;
    let samples = select_classes(&samples, &positions(&all, &names));
    if samples.is_empty() {
        return Err(Error::InvalidConfig(
            "no training samples for the selected classes".into(),
        ));
    }
    let anchors = store.anchors_for(&names)?;
    let descriptors = needs(&cfg, &store, &names)?;
    let shots = shots_in(&samples);
    let epochs = cfg.epochs_for(shots);

    let _lock = DirLock::for_file(&a.out)?;
    let mut inputs = vec![a.train.as_path(), a.store.as_path()];
    inputs.extend(a.classes.as_deref());
    RunManifest::new(
        "train",
        json!({"train": cfg, "shots": shots, "epochs": epochs, "classes": names}),
        Some(cfg.seed),
    )
    .inputs(&inputs)
    .outputs(&[&a.out])
    .write(&manifest_path_for(&a.out))?;

    let outcome = train(&samples, &anchors, descriptors.as_ref(), &cfg, epochs)?;
    let last = *outcome.history.last().expect("at least one epoch");
    write_json(
        &a.out,
        &ModelFile {
            classes: names,
            shots,
            epochs,
            config: cfg,
            bank: outcome.bank,
            history: outcome.history,
        },
    )?;
    println!(
        "trained {epochs} epochs on {} samples: total {:.6} (llm {:.6}, img {:.6})",
        samples.len(),
        last.total,
        last.l_llm,
        last.l_img
    );
    Ok(())
}

fn needs(
    cfg: &TrainConfig,
    store: &EmbeddingStore,
    names: &[String],
) -> Result<Option<ClassDescriptors>> {
    if cfg.objective.distill.needs_descriptors() {
        Ok(Some(store.descriptors_for(names)?))
    } else {
        Ok(None)
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model: ModelFile = read_json(&a.model)?;
    let store = a.store.as_deref().map(EmbeddingStore::load).transpose()?;
    let all = match (&a.classes, &store) {
        (None, None) => model.classes.clone(),
        _ => class_names(a.classes.as_deref(), store.as_ref())?,
    };
    let test = read_dataset(&a.test)?;
    check_labels(&test, all.len(), &a.test)?;

    let anchors_for = |names: &[String]| -> Result<Matrix> {
        if names == model.classes.as_slice() {
            return Ok(model.bank.anchors().clone());
        }
        match &store {
            Some(s) => s.anchors_for(names),
            None => Err(Error::InvalidConfig(
                "evaluated classes differ from the trained ones; pass --store for their anchors"
                    .into(),
            )),
        }
    };
    let subset_name = match a.subset {
        EvalSubset::All => "all",
        EvalSubset::Base => "base",
        EvalSubset::New => "new",
        EvalSubset::BaseToNew => "base-to-new",
    };
    let snapshot = json!({
        "model": a.model,
        "test": a.test,
        "subset": subset_name,
        "shots": model.shots,
        "epochs": model.epochs,
        "train": model.config,
    });
    let objective = &model.config.objective;
    let report = match a.subset {
        EvalSubset::BaseToNew => {
            let (base, new) = base_to_new_split(&all)?;
            evaluate_base_to_new(
                model.bank.context(),
                &anchors_for(&base)?,
                &anchors_for(&new)?,
                &select_classes(&test, &positions(&all, &base)),
                &select_classes(&test, &positions(&all, &new)),
                objective,
                model.config.seed,
                snapshot,
            )?
        }
        other => {
            let subset = match other {
                EvalSubset::Base => Subset::Base,
                EvalSubset::New => Subset::New,
                _ => Subset::All,
            };
            let names = subset_of(&all, subset)?;
            let bank = model.bank.with_anchors(anchors_for(&names)?)?;
            let test = select_classes(&test, &positions(&all, &names));
            evaluate_fewshot(&bank, &test, objective, model.config.seed, snapshot)?
        }
    };
    match &a.out {
        Some(out) => {
            let _lock = DirLock::for_file(out)?;
            RunManifest::new("eval", report.config.clone(), Some(report.seed))
                .inputs(&[&a.model, &a.test])
                .outputs(&[out])
                .write(&manifest_path_for(out))?;
            write_json(out, &report)?;
            println!("{}", serde_json::to_string(&report.metrics)?);
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, matches: Option<&ArgMatches>) -> Result<()> {
    warn_ignored_alpha(&a.align, matches);
    let store = EmbeddingStore::load(&a.store)?;
    let names = class_names(a.classes.as_deref(), Some(&store))?;
    let train_set = read_dataset(&a.train)?;
    let test_set = read_dataset(&a.test)?;
    check_labels(&train_set, names.len(), &a.train)?;
    check_labels(&test_set, names.len(), &a.test)?;
    let anchors = store.anchors_for(&names)?;
    let descriptors = if a.distill.iter().any(|d| d.needs_descriptors()) {
        Some(store.descriptors_for(&names)?)
    } else {
        None
    };
    let grid = AblationGrid {
        distill: a.distill.clone(),
        align: a.align.clone(),
        alpha: a.alpha.clone(),
        beta: a.beta.clone(),
        prompts: a.m.clone(),
        seeds: a.seed.clone(),
    };
    let mut base = TrainConfig {
        lr0: a.optim.lr,
        epochs: a.optim.epochs,
        batch_size: a.optim.batch_size,
        init_std: a.optim.init_std,
        ..TrainConfig::default()
    };
    base.objective.tau = a.solver.tau;
    base.objective.attention_tau = a.solver.attention_tau;
    base.objective.sinkhorn = a.solver.sinkhorn(base.objective.sinkhorn.alpha);
    for cell in grid.cells(&base) {
        cell.validate()?;
    }

    let _lock = DirLock::for_file(&a.out)?;
    let mut inputs = vec![a.train.as_path(), a.test.as_path(), a.store.as_path()];
    inputs.extend(a.classes.as_deref());
    RunManifest::new("ablate", json!({"grid": grid, "base": base}), None)
        .inputs(&inputs)
        .outputs(&[&a.out])
        .write(&manifest_path_for(&a.out))?;
    let rows = ablate(
        &train_set,
        &test_set,
        &anchors,
        descriptors.as_ref(),
        &grid,
        &base,
    )?;
    write_atomic(&a.out, to_csv(&rows).as_bytes())?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveInput {
    cost: Option<Matrix>,
    p: Option<Vec<f64>>,
    q: Option<Vec<f64>>,
    z: Option<EmbeddingMatrix>,
    w: Option<EmbeddingMatrix>,
}

fn marginal(weights: Option<Vec<f64>>, n: usize, field: &str) -> Result<ProbVector> {
    match weights {
        None => ProbVector::uniform(n),
        Some(w) if w.len() != n => Err(Error::Schema {
            pointer: format!("/{field}"),
            message: format!("expected {n} weights, got {}", w.len()),
        }),
        Some(w) => ProbVector::new(w).map_err(|e| Error::Schema {
            pointer: format!("/{field}"),
            message: e.to_string(),
        }),
    }
}

fn solve_ot(a: &SolveOtArgs) -> Result<()> {
    let input: SolveInput = read_json(&a.input)?;
    let cfg = SinkhornConfig {
        lambda: a.lambda,
        inner_max: a.inner_max,
        outer_max: a.outer_max,
        marginal_tol: a.marginal_tol,
        plan_tol: a.plan_tol,
        alpha: a.alpha,
    };
    let (plan, objective): (TransportPlan, f64) = match input {
        SolveInput {
            cost: Some(cost),
            z: None,
            w: None,
            p,
            q,
        } => {
            let p = marginal(p, cost.rows(), "p")?;
            let q = marginal(q, cost.cols(), "q")?;
            let plan = sinkhorn(&cost, &p, &q, &cfg)?;
            let objective = plan.cost(&cost)?;
            (plan, objective)
        }
        SolveInput {
            cost: None,
            z: Some(z),
            w: Some(w),
            p: None,
            q: None,
        } => {
            let plan = solve_assignment(&z, &w, &cfg)?;
            let c_gwd = gwd_cost(
                &cosine_self(&z)?,
                &cosine_self(&w)?,
                plan.p(),
                plan.q(),
                plan.matrix(),
            )?;
            let fused = fused_cost(&wd_cost(&z, &w)?, &c_gwd, cfg.alpha)?;
            let objective = plan.cost(&fused)?;
            (plan, objective)
        }
        _ => {
            return Err(Error::Schema {
                pointer: String::new(),
                message: "give either `cost` (with optional `p`, `q`) or both `z` and `w`".into(),
            })
        }
    };
    let d = plan.diagnostics();
    let out = json!({
        "plan": plan.matrix(),
        "objective": objective,
        "row_residual": d.row_residual,
        "col_residual": d.col_residual,
        "inner_iterations": d.inner_iterations,
        "outer_iterations": d.outer_iterations,
        "converged": d.converged,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let manifest: RunManifest = read_json(&a.manifest)?;
    let exe = std::env::current_exe()?;
    let status = std::process::Command::new(exe)
        .args(&manifest.argv)
        .status()?;
    std::process::exit(status.code().unwrap_or(4));
}
