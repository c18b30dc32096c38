use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use gcnflow::data::{load_bundle_with_manifest, BundleManifest};
use gcnflow::diagnostics::layer_energies;
use gcnflow::gcn::{gcn_forward, ForwardMode};
use gcnflow::graph::{build_propagation_operator, degree_sum_statistics};
use gcnflow::init::{iso_magnitude, iso_uniform_bound, iso_variance};
use gcnflow::model::{build_model, write_checkpoint, Architecture, ModelState};
use gcnflow::train::{mean_std, train_with_operator, write_metrics_jsonl, TrainConfig, TrainOutcome};
use gcnflow::{
    generate_synthetic, GraphBundle, InitKind, InitScheme, PropagationOperator, SkipMode, SyntheticKind,
    SyntheticParams,
};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{EnergyProbeArgs, InspectArgs, SweepArgs, TrainArgs};

const SYNTHETIC_PREFIX: &str = "synthetic:";

/// Parses `ring:N`, `path:N`, `star:N`, `er:N:P` or `sbm:KxM:P_IN:P_OUT`.
fn synthetic_kind(spec: &str) -> Result<SyntheticKind> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> Result<usize> { s.parse().with_context(|| format!("bad count {s:?} in {spec:?}")) };
    let prob = |s: &str| -> Result<f64> { s.parse().with_context(|| format!("bad probability {s:?} in {spec:?}")) };
    Ok(match parts.as_slice() {
        ["ring", n] => SyntheticKind::Ring { n: num(n)? },
        ["path", n] => SyntheticKind::Path { n: num(n)? },
        ["star", n] => SyntheticKind::Star { n: num(n)? },
        ["er", n, p] => SyntheticKind::ErdosRenyi { n: num(n)?, p: prob(p)? },
        ["sbm", blocks, p_in, p_out] => {
            let (k, m) = blocks
                .split_once('x')
                .with_context(|| format!("block layout {blocks:?} should look like 3x100"))?;
            SyntheticKind::StochasticBlock {
                sizes: vec![num(m)?; num(k)?],
                p_in: prob(p_in)?,
                p_out: prob(p_out)?,
            }
        }
        _ => bail!("unknown synthetic graph {spec:?}; expected ring:N, path:N, star:N, er:N:P or sbm:KxM:P_IN:P_OUT"),
    })
}

pub fn load_dataset(dataset: &str) -> Result<(GraphBundle, Option<BundleManifest>)> {
    if let Some(spec) = dataset.strip_prefix(SYNTHETIC_PREFIX) {
        let params = SyntheticParams {
            num_features: 16,
            num_classes: 3,
            ..SyntheticParams::default()
        };
        let graph = generate_synthetic(&synthetic_kind(spec)?, &params, 0)?;
        return Ok((graph, None));
    }
    let (graph, manifest) =
        load_bundle_with_manifest(dataset).with_context(|| format!("loading dataset {dataset}"))?;
    Ok((graph, Some(manifest)))
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn run_header(command: &str, dataset: &str, cfg: &TrainConfig) -> serde_json::Value {
    json!({
        "tool": "gcnflow",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "dataset": dataset,
        "config": cfg,
        "created_unix": unix_time(),
    })
}

fn write_metrics(path: &Path, header: &serde_json::Value, outcome: &TrainOutcome) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_metrics_jsonl(BufWriter::new(file), header, &outcome.history, &outcome.summary)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = args
        .hyper
        .config(args.layers as usize, args.init, args.skip, args.seed);
    cfg.validate()?;
    let (graph, _) = load_dataset(&args.dataset)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let op = build_propagation_operator(&graph);
    let outcome = train_with_operator(&graph, &op, &cfg)?;

    write_metrics(&args.out.join("metrics.jsonl"), &run_header("train", &args.dataset, &cfg), &outcome)?;
    let ckpt = args.out.join("model.ckpt");
    let file = File::create(&ckpt).with_context(|| format!("creating {}", ckpt.display()))?;
    write_checkpoint(&outcome.model, BufWriter::new(file)).with_context(|| format!("writing {}", ckpt.display()))?;

    println!(
        "test_acc={:.4} best_val_epoch={}",
        outcome.summary.test_accuracy, outcome.summary.best_val_epoch
    );
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    layers: usize,
    init: InitKind,
    skip: SkipMode,
    seed: u64,
}

impl Cell {
    fn file_name(&self) -> String {
        format!("L{}-{}-{}-seed{}.jsonl", self.layers, self.init, self.skip, self.seed)
    }
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let arms = [
        (InitKind::GlorotUniform, SkipMode::None),
        (InitKind::GlorotUniform, SkipMode::Dynamic),
        (InitKind::IsoUniform, SkipMode::None),
        (InitKind::IsoUniform, SkipMode::Dynamic),
    ];
    let mut cells = Vec::new();
    for &layers in &args.layers.0 {
        for (init, skip) in arms {
            for &seed in &args.seed.0 {
                let cell = Cell {
                    layers: layers as usize,
                    init,
                    skip,
                    seed,
                };
                args.hyper.config(cell.layers, init, skip, seed).validate()?;
                cells.push(cell);
            }
        }
    }
    let (graph, _) = load_dataset(&args.dataset)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let op = build_propagation_operator(&graph);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs as usize)
        .build()
        .context("starting worker pool")?;
    let results: Vec<Result<f64>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(&args, &graph, &op, cell))
            .collect()
    });

    let mut csv = String::from("layers,init,skip,runs,failed,mean_test_acc,std_test_acc\n");
    let mut failures = Vec::new();
    for group in cells.chunks(args.seed.0.len()).zip(results.chunks(args.seed.0.len())) {
        let (group_cells, group_results) = group;
        let head = group_cells[0];
        let mut accs = Vec::new();
        for (cell, r) in group_cells.iter().zip(group_results) {
            match r {
                Ok(acc) => accs.push(*acc),
                Err(e) => failures.push(format!("{}: {e:#}", cell.file_name())),
            }
        }
        let (mean, std) = mean_std(&accs);
        let line = format!(
            "{},{},{},{},{},{:.6},{:.6}",
            head.layers,
            head.init,
            head.skip,
            accs.len(),
            group_cells.len() - accs.len(),
            mean,
            std
        );
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    let summary = args.out.join("summary.csv");
    fs::write(&summary, csv).with_context(|| format!("writing {}", summary.display()))?;

    if !failures.is_empty() {
        for f in &failures {
            log::error!("{f}");
        }
        bail!("{} of {} runs failed; first: {}", failures.len(), cells.len(), failures[0]);
    }
    Ok(())
}

fn run_cell(args: &SweepArgs, graph: &GraphBundle, op: &PropagationOperator, cell: &Cell) -> Result<f64> {
    let cfg = args.hyper.config(cell.layers, cell.init, cell.skip, cell.seed);
    let outcome = train_with_operator(graph, op, &cfg)?;
    write_metrics(
        &args.out.join(cell.file_name()),
        &run_header("sweep", &args.dataset, &cfg),
        &outcome,
    )?;
    Ok(outcome.summary.test_accuracy)
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    let (graph, manifest) = load_dataset(&args.dataset)?;
    let adj = graph.adjacency();
    let degrees = graph.degrees();
    let stats = degree_sum_statistics(&graph);
    println!("dataset={}", args.dataset);
    println!("nodes={}", graph.num_nodes());
    println!("features={}", graph.num_features());
    println!("classes={}", graph.num_classes());
    println!("edges_undirected={}", adj.num_undirected_edges());
    println!("edges_directed={}", adj.num_directed_edges());
    if let Some(m) = &manifest {
        println!("source_directed={}", m.source_directed);
        println!("source_edges_directed={}", m.num_edges_directed);
        println!("source_edges_undirected={}", m.num_edges_undirected);
    }
    let splits = graph.splits();
    println!(
        "split_sizes={},{},{}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    println!(
        "degree_min={} degree_max={} degree_mean={:.6}",
        degrees.iter().min().copied().unwrap_or(0),
        degrees.iter().max().copied().unwrap_or(0),
        degrees.iter().sum::<usize>() as f64 / degrees.len() as f64
    );
    println!("S1={}", stats.s1);
    println!("S2={}", stats.s2);
    println!("iso_magnitude={:.9e}", iso_magnitude(&graph));
    for &c in &args.hidden.0 {
        let c = c as usize;
        println!(
            "hidden={c} iso_variance={:.9e} iso_uniform_bound={:.9}",
            iso_variance(&graph, c),
            iso_uniform_bound(&graph, c)
        );
    }
    Ok(())
}

fn energies(model: &ModelState, graph: &GraphBundle, op: &PropagationOperator) -> Result<Vec<f64>> {
    let (logits, tape) = gcn_forward(model, op, graph.features(), ForwardMode::Eval)?;
    Ok(layer_energies(tape.hidden_outputs(), &logits, graph)?.per_layer)
}

pub fn energy_probe(args: EnergyProbeArgs) -> Result<()> {
    let layers = args.layers as usize;
    let (graph, _) = load_dataset(&args.dataset)?;
    let op = build_propagation_operator(&graph);
    let arch = Architecture {
        num_layers: layers,
        input_dim: graph.num_features(),
        hidden_dim: args.hyper.hidden as usize,
        num_classes: graph.num_classes(),
    };
    let scheme = InitScheme {
        kind: args.init,
        seed: args.seed,
    };
    let model = build_model(arch, scheme, &graph)?.with_skip(args.skip, args.hyper.alpha, args.hyper.skip_source)?;
    let at_init = energies(&model, &graph, &op)?;
    for (l, e) in at_init.iter().enumerate() {
        println!("stage=init layer={} energy={e:.9e}", l + 1);
    }

    let mut report = json!({ "dataset": args.dataset, "init": at_init });
    if args.hyper.epochs > 0 {
        let cfg = args.hyper.config(layers, args.init, args.skip, args.seed);
        cfg.validate()?;
        let outcome = train_with_operator(&graph, &op, &cfg)?;
        let trained = energies(&outcome.model, &graph, &op)?;
        for (l, e) in trained.iter().enumerate() {
            println!("stage=trained layer={} energy={e:.9e}", l + 1);
        }
        println!(
            "test_acc={:.4} best_val_epoch={}",
            outcome.summary.test_accuracy, outcome.summary.best_val_epoch
        );
        report["trained"] = json!(trained);
        report["summary"] = json!(outcome.summary);
    }
    if let Some(path) = &args.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "{report}").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
