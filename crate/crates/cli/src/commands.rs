use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rfkit::{
    combine_logits, compose_pipeline, default_target_dim, evaluate, export_logits, import_logits,
    learn_combination_weights, load_dataset_with, load_ensemble, load_idx, mlr, partition,
    save_artifact, save_dataset, scan_combination_weights, softmax_rows, train_blocks, Artifact,
    Augmentation, BandwidthChoice, Block, BlockEnsemble, BottleneckMode, ComposeConfig, DataFormat,
    Dataset, Error, EvalReport, FeatureMap, History, KernelKind, KernelSpec, LabelMap, LoadOptions,
    Result, SaveOptions, ScanObjective, TrainConfig,
};

use crate::kernel::{KernelExpr, Resolved};
use crate::{
    BudgetArgs, CombineCmd, Command, ComposeCmd, ConvertCmd, DataArgs, EvalCmd, InputArgs,
    KernelArgs, OptimArgs, PredictCmd, TrainCmd, TuneCmd,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(c) => cmd_train(c),
        Command::Tune(c) => cmd_tune(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Predict(c) => cmd_predict(c),
        Command::Combine(c) => cmd_combine(c),
        Command::Compose(c) => cmd_compose(c),
        Command::Convert(c) => cmd_convert(c),
    }
}

fn format_of(path: &Path, explicit: Option<&str>) -> Result<DataFormat> {
    if let Some(f) = explicit {
        return f.parse();
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(DataFormat::Csv),
        Some("svm" | "svmlight" | "libsvm" | "txt") => Ok(DataFormat::Svmlight),
        Some("rfd" | "bin") => Ok(DataFormat::DenseBinary),
        _ => Err(Error::InvalidArgument(format!(
            "cannot tell the format of {} from its extension; pass --format",
            path.display()
        ))),
    }
}

fn load(path: &Path, input: &InputArgs, labels: Option<LabelMap>) -> Result<Dataset> {
    let format = format_of(path, input.format.as_deref())?;
    let ds = load_dataset_with(
        path,
        format,
        &LoadOptions {
            labels,
            num_features: None,
        },
    )?;
    if input.scale && !ds.scaled {
        ds.scale_unit()
    } else {
        Ok(ds)
    }
}

struct Prepared {
    train: Dataset,
    heldout: Dataset,
    test: Option<Dataset>,
}

fn prepare(d: &DataArgs) -> Result<Prepared> {
    let full = load(&d.train, &d.input, None)?;
    let (train, heldout) = full.split(d.heldout_frac, d.seed)?;
    let test = match &d.test {
        Some(p) => Some(load(p, &d.input, Some(full.labels.clone()))?),
        None => None,
    };
    Ok(Prepared {
        train,
        heldout,
        test,
    })
}

fn train_config(o: &OptimArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        step_size: o.step_size,
        max_epochs: o.epochs,
        minibatch: o.minibatch,
        early_stop_patience: o.patience,
        l2: o.l2,
        visit_order: o.visit_order,
        seed,
    }
}

fn model_id(out: Option<&Path>, fallback: &str) -> String {
    out.and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| fallback.to_string())
}

fn print_reports(reports: &[EvalReport]) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", EvalReport::CSV_HEADER);
    for r in reports {
        let _ = writeln!(out, "{r}");
    }
}

fn log_bandwidths(r: &Resolved) {
    for (i, (kind, bw)) in r.bandwidths.iter().enumerate() {
        eprintln!("kernel_term={i} kind={} bandwidth={bw}", kind.name());
    }
}

fn log_history(block: usize, h: &History) {
    for r in &h.rows {
        eprintln!(
            "metric=history block={block} epoch={} train_loss={} heldout_perplexity={} heldout_accuracy={}",
            r.epoch, r.train_loss, r.heldout_perplexity, r.heldout_accuracy
        );
    }
    eprintln!("block={block} best_epoch={}", h.best_epoch);
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn history_csv(histories: &[History]) -> String {
    let mut out = format!("block,{}\n", rfkit::EpochRecord::CSV_HEADER);
    for (b, h) in histories.iter().enumerate() {
        for r in &h.rows {
            out.push_str(&format!("{b},{}\n", r.to_csv_row()));
        }
    }
    out
}

struct Setup {
    expr: KernelExpr,
    bandwidth: BandwidthChoice,
    augmentation: Augmentation,
    block_size: usize,
}

fn setup(kernel: &KernelArgs, budget: &BudgetArgs) -> Result<Setup> {
    let block_size = budget.block_size.unwrap_or(budget.features);
    Ok(Setup {
        expr: kernel.kernel.parse()?,
        bandwidth: kernel.bandwidth.parse()?,
        augmentation: budget.augment.parse()?,
        block_size,
    })
}

fn fit(
    data: &Prepared,
    kernel: &Resolved,
    setup: &Setup,
    budget: &BudgetArgs,
    config: &TrainConfig,
) -> Result<(BlockEnsemble, Vec<History>)> {
    train_blocks(
        config,
        setup.augmentation,
        &kernel.descriptor,
        &data.train,
        &data.heldout,
        budget.features,
        setup.block_size,
    )
}

fn cmd_train(c: TrainCmd) -> Result<()> {
    let setup = setup(&c.kernel, &c.budget)?;
    let config = train_config(&c.optim, c.data.seed);
    let plans = partition(c.budget.features, setup.block_size, c.data.seed)?;
    let data = prepare(&c.data)?;
    let kernel = setup.expr.resolve(
        setup.bandwidth,
        1.0,
        data.train.x.view(),
        c.kernel.pair_budget,
        c.data.seed,
    )?;

    eprintln!(
        "train={} heldout={} classes={} dim={}",
        data.train.len(),
        data.heldout.len(),
        data.train.num_classes(),
        data.train.dim()
    );
    log_bandwidths(&kernel);
    eprintln!(
        "blocks={} features={} block_size={}",
        plans.len(),
        c.budget.features,
        setup.block_size
    );
    for p in &plans {
        eprintln!(
            "block={} features={} seed={}",
            p.index, p.num_features, p.seed
        );
    }
    if c.dry_run {
        return Ok(());
    }

    let (ensemble, histories) = fit(&data, &kernel, &setup, &c.budget, &config)?;
    for (b, h) in histories.iter().enumerate() {
        log_history(b, h);
    }
    if let Some(path) = &c.history {
        write_file(path, &history_csv(&histories))?;
    }
    let out = c
        .out
        .as_deref()
        .expect("clap requires --out without --dry-run");
    let options = SaveOptions {
        materialize_banks: !c.seed_only_banks,
    };
    let artifact = Artifact::Ensemble(ensemble);
    save_artifact(out, &artifact, options)?;
    eprintln!("saved={}", out.display());
    let Artifact::Ensemble(ensemble) = artifact else {
        unreachable!()
    };

    let id = model_id(Some(out), "rfkit");
    let mut reports = vec![evaluate(
        &ensemble,
        data.heldout.x.view(),
        &data.heldout.y,
        &id,
        &data.heldout.id,
    )?];
    if let Some(test) = &data.test {
        reports.push(evaluate(&ensemble, test.x.view(), &test.y, &id, &test.id)?);
    }
    print_reports(&reports);
    Ok(())
}

struct Cell {
    step_size: f64,
    multiplier: f64,
    bandwidths: String,
    perplexity: f64,
    accuracy: f64,
}

fn cmd_tune(c: TuneCmd) -> Result<()> {
    if c.step_sizes.is_empty() || c.multipliers.is_empty() {
        return Err(Error::InvalidArgument("the tuning grid is empty".into()));
    }
    for &v in c.step_sizes.iter().chain(&c.multipliers) {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid values must be positive, got {v}"
            )));
        }
    }
    let setup = setup(&c.kernel, &c.budget)?;
    let plans = partition(c.budget.features, setup.block_size, c.data.seed)?;
    eprintln!(
        "grid={}x{} blocks={} features={}",
        c.step_sizes.len(),
        c.multipliers.len(),
        plans.len(),
        c.budget.features
    );
    let data = prepare(&c.data)?;
    if c.dry_run {
        for &m in &c.multipliers {
            let k = setup.expr.resolve(
                setup.bandwidth,
                m,
                data.train.x.view(),
                c.kernel.pair_budget,
                c.data.seed,
            )?;
            eprintln!("multiplier={m}");
            log_bandwidths(&k);
        }
        return Ok(());
    }

    let mut cells = Vec::new();
    for &m in &c.multipliers {
        let kernel = setup.expr.resolve(
            setup.bandwidth,
            m,
            data.train.x.view(),
            c.kernel.pair_budget,
            c.data.seed,
        )?;
        let bandwidths = kernel
            .bandwidths
            .iter()
            .map(|(_, b)| b.to_string())
            .collect::<Vec<_>>()
            .join(";");
        for &step in &c.step_sizes {
            let config = TrainConfig {
                step_size: step,
                ..train_config(&c.optim, c.data.seed)
            };
            let (ensemble, _) = fit(&data, &kernel, &setup, &c.budget, &config)?;
            let r = evaluate(
                &ensemble,
                data.heldout.x.view(),
                &data.heldout.y,
                "tune",
                &data.heldout.id,
            )?;
            eprintln!(
                "metric=tune step_size={step} multiplier={m} heldout_perplexity={} heldout_accuracy={}",
                r.perplexity, r.accuracy
            );
            cells.push(Cell {
                step_size: step,
                multiplier: m,
                bandwidths: bandwidths.clone(),
                perplexity: r.perplexity,
                accuracy: r.accuracy,
            });
        }
    }
    cells.sort_by(|a, b| {
        a.perplexity
            .total_cmp(&b.perplexity)
            .then(a.step_size.total_cmp(&b.step_size))
    });

    let mut table =
        String::from("rank,step_size,multiplier,bandwidth,heldout_perplexity,heldout_accuracy\n");
    for (i, cell) in cells.iter().enumerate() {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            cell.step_size,
            cell.multiplier,
            cell.bandwidths,
            cell.perplexity,
            cell.accuracy
        ));
    }
    print!("{table}");
    if let Some(path) = &c.out {
        write_file(path, &table)?;
    }
    let best = &cells[0];
    eprintln!(
        "selected step_size={} multiplier={} bandwidth={}",
        best.step_size, best.multiplier, best.bandwidths
    );
    Ok(())
}

fn check_logits(logits: &Array2<f64>, data: &Dataset, path: &Path) -> Result<()> {
    if logits.nrows() != data.len() || logits.ncols() < data.num_classes() {
        return Err(Error::Shape(format!(
            "{} holds {} x {} logits but the data has {} samples of {} classes",
            path.display(),
            logits.nrows(),
            logits.ncols(),
            data.len(),
            data.num_classes()
        )));
    }
    Ok(())
}

fn cmd_eval(c: EvalCmd) -> Result<()> {
    let ensemble = c.model.as_deref().map(load_ensemble).transpose()?;
    let data = load(
        &c.data,
        &c.input,
        ensemble.as_ref().map(|e| e.labels.clone()),
    )?;
    let report = match (&c.logits, &ensemble) {
        (Some(path), _) => {
            let (logits, id) = import_logits(path)?;
            check_logits(&logits, &data, path)?;
            EvalReport::from_posteriors(softmax_rows(logits.view()).view(), &data.y, id, &data.id)?
        }
        (None, Some(e)) => evaluate(
            e,
            data.x.view(),
            &data.y,
            &model_id(c.model.as_deref(), "model"),
            &data.id,
        )?,
        (None, None) => unreachable!("clap requires --model or --logits"),
    };
    print_reports(&[report]);
    Ok(())
}

fn cmd_predict(c: PredictCmd) -> Result<()> {
    let ensemble = load_ensemble(&c.model)?;
    let data = load(&c.data, &c.input, Some(ensemble.labels.clone()))?;
    let logits = rfkit::Classifier::predict_logits(&ensemble, data.x.view())?;
    if c.posteriors {
        let p = softmax_rows(logits.view());
        let header: Vec<String> = ensemble
            .labels
            .originals()
            .iter()
            .map(|l| l.to_string())
            .collect();
        let mut text = header.join(",") + "\n";
        for row in p.rows() {
            text.push_str(
                &row.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            text.push('\n');
        }
        write_file(&c.out, &text)?;
    } else {
        export_logits(&c.out, logits.view(), &model_id(Some(&c.model), "model"))?;
    }
    eprintln!(
        "samples={} classes={} saved={}",
        logits.nrows(),
        logits.ncols(),
        c.out.display()
    );
    Ok(())
}

fn cmd_combine(c: CombineCmd) -> Result<()> {
    if c.logits.len() < 2 {
        return Err(Error::InvalidArgument(
            "combine needs at least two logit files".into(),
        ));
    }
    let objective = match c.objective.as_str() {
        "accuracy" => ScanObjective::Accuracy,
        "perplexity" => ScanObjective::Perplexity,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown objective `{other}`"
            )))
        }
    };
    let labels = c
        .model
        .as_deref()
        .map(load_ensemble)
        .transpose()?
        .map(|e| e.labels);
    let data = load(&c.data, &c.input, labels)?;
    let mut sets = Vec::new();
    let mut reports = Vec::new();
    for path in &c.logits {
        let (logits, id) = import_logits(path)?;
        check_logits(&logits, &data, path)?;
        reports.push(EvalReport::from_posteriors(
            softmax_rows(logits.view()).view(),
            &data.y,
            id,
            &data.id,
        )?);
        sets.push(logits);
    }
    let views: Vec<ArrayView2<f64>> = sets.iter().map(|s| s.view()).collect();
    let weights = if let Some(w) = c.weights {
        w
    } else if c.learn {
        let fit = learn_combination_weights(&views, &data.y, 1.0, 1000)?;
        eprintln!(
            "converged={} iterations={}",
            fit.converged,
            fit.objective_trace.len() - 1
        );
        fit.weights.betas
    } else {
        scan_combination_weights(&views, &data.y, c.grid_step, objective)?
            .best
            .weights
    };
    let combined = combine_logits(&views, &weights)?;
    eprintln!(
        "weights={}",
        weights
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    reports.push(EvalReport::from_posteriors(
        softmax_rows(combined.view()).view(),
        &data.y,
        "combined",
        &data.id,
    )?);
    if let Some(out) = &c.out {
        export_logits(out, combined.view(), "combined")?;
    }
    print_reports(&reports);
    Ok(())
}

fn cmd_compose(c: ComposeCmd) -> Result<()> {
    let data = prepare(&c.data)?;
    let seed = c.data.seed;
    let kind1: KernelKind = c.stage1_kernel.parse()?;
    let bw1 = c.stage1_bandwidth.parse::<BandwidthChoice>()?.resolve(
        data.train.x.view(),
        kind1.metric(),
        c.pair_budget,
        seed,
    )?;
    let mode: BottleneckMode = c.mode.parse()?;
    let source_dim = match mode {
        BottleneckMode::PcaFeatures => c.stage1_features,
        BottleneckMode::PcaLogPosteriors => data.train.num_classes(),
    };
    let config = train_config(&c.optim, seed);
    let compose = ComposeConfig {
        stage1: KernelSpec::new(kind1, bw1)?,
        stage1_features: c.stage1_features,
        mode,
        target_dim: c
            .target_dim
            .unwrap_or_else(|| default_target_dim(source_dim)),
        stage2_kind: c.stage2_kernel.parse()?,
        stage2_bandwidth: c.stage2_bandwidth.parse()?,
        stage2_features: c.stage2_features,
        classifier: config,
        pair_budget: c.pair_budget,
    };
    eprintln!(
        "stage1 kind={} bandwidth={bw1} features={} mode={} target_dim={}",
        kind1.name(),
        compose.stage1_features,
        c.mode,
        compose.target_dim
    );
    let composite = compose_pipeline(&compose, &data.train, &data.heldout, seed)?;
    eprintln!(
        "stage2 kind={} bandwidth={}",
        compose.stage2_kind.name(),
        composite.stage2.spectrum.factors()[0].bandwidth
    );

    let mut blocks = Vec::new();
    for map in [
        FeatureMap::Bank(composite.stage1.clone()),
        FeatureMap::Composite(Box::new(composite)),
    ] {
        let train_f = map.transform(data.train.x.view())?;
        let held_f = map.transform(data.heldout.x.view())?;
        let (model, history) = mlr::train(
            &config,
            &train_f.view(),
            &data.train.y,
            data.train.num_classes(),
            held_f.view(),
            &data.heldout.y,
        )?;
        log_history(blocks.len(), &history);
        blocks.push(Block { map, model });
    }
    let mut reports = Vec::new();
    let mut models = Vec::new();
    for (block, name) in blocks.into_iter().zip(["stage1", "composite"]) {
        let e = BlockEnsemble::new(vec![block], data.train.labels.clone())?;
        reports.push(evaluate(
            &e,
            data.heldout.x.view(),
            &data.heldout.y,
            name,
            &data.heldout.id,
        )?);
        if let Some(test) = &data.test {
            reports.push(evaluate(&e, test.x.view(), &test.y, name, &test.id)?);
        }
        models.push(e);
    }
    if let Some(out) = &c.out {
        save_artifact(
            out,
            &Artifact::Ensemble(models.pop().expect("two models")),
            SaveOptions::default(),
        )?;
        eprintln!("saved={}", out.display());
    }
    print_reports(&reports);
    Ok(())
}

fn cmd_convert(c: ConvertCmd) -> Result<()> {
    let to: DataFormat = c.to.parse()?;
    let mut ds = match (&c.input, &c.images, &c.labels) {
        (Some(input), _, _) => load(input, &c.read, None)?,
        (None, Some(images), Some(labels)) => {
            let ds = load_idx(images, labels, c.limit)?;
            if c.read.scale {
                ds.scale_unit()?
            } else {
                ds
            }
        }
        _ => unreachable!("clap requires --input or --images with --labels"),
    };
    if let Some(limit) = c.limit.filter(|&l| l < ds.len()) {
        let id = ds.id.clone();
        let x = ds.x.slice(s![..limit, ..]).to_owned();
        let raw: Vec<i64> = ds.raw_labels()[..limit].to_vec();
        let scaled = ds.scaled;
        ds = Dataset::from_raw_labels(x, &raw, id)?;
        ds.scaled = scaled;
    }
    save_dataset(&ds, &c.out, to)?;
    eprintln!(
        "samples={} dim={} classes={} saved={}",
        ds.len(),
        ds.dim(),
        ds.num_classes(),
        c.out.display()
    );
    Ok(())
}
