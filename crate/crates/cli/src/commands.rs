use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use convsurgeon::diffcore::{self, CsvSections, DiffReport, HyperDiffEntry, LayerAlignment, ParamDiffEntry, StructDiffEntry};
use convsurgeon::differential::{self, CorpusInput, DiscrepancyExport};
use convsurgeon::fixture::{self, FixtureParams};
use convsurgeon::interpreter::{self, ActivationTrace};
use convsurgeon::localize::{self, LayerDivergence, LocalizationReport, LocalizeConfig};
use convsurgeon::nmif::{self, ModelGraph};
use convsurgeon::{plot, repair};
use serde::Serialize;

use crate::{ChainArgs, Command, CompareArgs, DiffArgs, GenFixtureArgs, InferArgs, Models, PairSelect, ReportArgs, TraceArgs, ValidateArgs};

pub enum Status {
    Clean,
    Findings,
}

impl Status {
    fn from_findings(found: bool) -> Self {
        if found {
            Status::Findings
        } else {
            Status::Clean
        }
    }
}

pub fn run(command: Command) -> Result<Status> {
    match command {
        Command::Validate(args) => validate(args),
        Command::Infer(args) => infer(args),
        Command::Compare(args) => compare(args),
        Command::DiffParams(args) => diff(args, DiffKind::Params),
        Command::DiffHypers(args) => diff(args, DiffKind::Hypers),
        Command::DiffGraph(args) => diff(args, DiffKind::Graph),
        Command::Trace(args) => trace(args),
        Command::Localize(args) => localize_cmd(args),
        Command::Repair(args) => repair_cmd(args),
        Command::Report(args) => report(args),
        Command::GenFixture(args) => gen_fixture(args),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(path: &Path) -> Result<&Path> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path)
}

fn model_label(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
    name.strip_suffix(".nmif").map(str::to_string).unwrap_or(name)
}

/// Loads the models named on the command line, canonicalized to NCHW.
fn load_models(models: &Models) -> Result<Vec<(String, ModelGraph)>> {
    let loaded: Vec<(String, ModelGraph)> = match &models.chain {
        Some(path) => {
            let chain = nmif::load_chain(path).with_context(|| format!("loading chain {}", path.display()))?;
            chain.canonicalized()?.stages().iter().map(|s| (s.label.clone(), s.model.clone())).collect()
        }
        None => models
            .models
            .iter()
            .map(|p| {
                let model = nmif::load_model(p).with_context(|| format!("loading {}", p.display()))?;
                Ok((model_label(p), nmif::canonicalize_layout(&model)?))
            })
            .collect::<Result<_>>()?,
    };
    if loaded.len() < 2 {
        bail!("need at least two models (or --chain), got {}", loaded.len());
    }
    Ok(loaded)
}

fn load_pair(models: &Models, select: &PairSelect) -> Result<((String, ModelGraph), (String, ModelGraph))> {
    let all = load_models(models)?;
    let to = select.to.unwrap_or(all.len() - 1);
    if select.from >= all.len() || to >= all.len() || select.from == to {
        bail!("invalid model pair ({}, {}) for {} models", select.from, to, all.len());
    }
    Ok((all[select.from].clone(), all[to].clone()))
}

fn load_corpus(dir: &Path) -> Result<Vec<CorpusInput>> {
    differential::load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn validate(args: ValidateArgs) -> Result<Status> {
    let model = nmif::load_model_unchecked(&args.model, nmif::LoadOptions::default())
        .with_context(|| format!("reading {}", args.model.display()))?;
    let violations = nmif::validate_model(&model);
    for v in &violations {
        println!("{v}");
    }
    println!("{}: {} violation(s)", args.model.display(), violations.len());
    Ok(Status::from_findings(!violations.is_empty()))
}

#[derive(Serialize)]
struct InferOutput<'a> {
    input_id: &'a str,
    top_k: &'a [(usize, f32)],
    non_finite: &'a [String],
}

fn infer(args: InferArgs) -> Result<Status> {
    let model = nmif::load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let model = nmif::canonicalize_layout(&model)?;
    let input = nmif::read_nt(&args.input, false).with_context(|| format!("reading {}", args.input.display()))?;
    let input_id = args.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let trace: ActivationTrace = interpreter::execute(&model, &input_id, &input, args.out.is_some(), args.k)?;
    for (rank, (label, score)) in trace.top_k.iter().enumerate() {
        println!("{}\t{label}\t{score}", rank + 1);
    }
    for node in &trace.non_finite {
        eprintln!("warning: non-finite output at {node}");
    }
    if let Some(out) = &args.out {
        let out = out_dir(out)?;
        write_json(
            &out.join("infer.json"),
            &InferOutput {
                input_id: &input_id,
                top_k: &trace.top_k,
                non_finite: &trace.non_finite,
            },
        )?;
        interpreter::export_trace(&trace, &out.join("trace"))?;
    }
    Ok(Status::Clean)
}

fn compare(args: CompareArgs) -> Result<Status> {
    let loaded = load_models(&args.models)?;
    let corpus = load_corpus(&args.corpus)?;
    let (labels, models): (Vec<String>, Vec<ModelGraph>) = loaded.into_iter().unzip();
    let records = differential::run_corpus(&models, &corpus, args.k)?;
    let mut report = differential::compare_labels(&records, 0, models.len() - 1);
    report.triage.truncate(args.triage);
    let pairwise = (models.len() > 2).then(|| differential::pairwise_rates(&records, models.len()));

    let out = out_dir(&args.out)?;
    differential::write_discrepancy_csv(&report, &out.join("discrepancy.csv"))?;
    if args.heatmap {
        match &pairwise {
            Some(rates) => fs::write(out.join("heatmap.svg"), plot::heatmap_svg(&labels, rates))?,
            None => eprintln!("warning: --heatmap needs more than two models; skipped"),
        }
    }
    let findings = report.rate > 0.0 || pairwise.as_ref().is_some_and(|m| m.iter().flatten().any(|&r| r > 0.0));
    println!("rate: {:?} ({}/{})", report.rate, report.discrepant_inputs, report.total_inputs);
    for id in &report.triage {
        match report.tau(id) {
            Some(t) => println!("triage {id}: tau {t}"),
            None => println!("triage {id}: tau undefined"),
        }
    }
    write_json(
        &out.join("discrepancy.json"),
        &DiscrepancyExport {
            models: labels,
            k: args.k,
            report,
            pairwise_rates: pairwise,
        },
    )?;
    Ok(Status::from_findings(findings))
}

#[derive(Clone, Copy, PartialEq)]
enum DiffKind {
    Params,
    Hypers,
    Graph,
}

#[derive(Serialize)]
struct DiffOutput<'a> {
    source: &'a str,
    target: &'a str,
    alignment: &'a LayerAlignment,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<&'a [ParamDiffEntry]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hypers: Option<&'a [HyperDiffEntry]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    structure: Option<&'a [StructDiffEntry]>,
}

fn diff(args: DiffArgs, kind: DiffKind) -> Result<Status> {
    let ((source_label, source), (target_label, target)) = load_pair(&args.models, &args.select)?;
    let report = DiffReport::compute(&source, &target);
    let out = out_dir(&args.out)?;
    let sections = CsvSections {
        params: kind == DiffKind::Params,
        hypers: kind == DiffKind::Hypers,
        structure: kind == DiffKind::Graph,
    };
    diffcore::write_diff_csv(&report, sections, &out.join("diff.csv"))?;
    write_json(
        &out.join("diff.json"),
        &DiffOutput {
            source: &source_label,
            target: &target_label,
            alignment: &report.alignment,
            params: sections.params.then_some(report.params.as_slice()),
            hypers: sections.hypers.then_some(report.hypers.as_slice()),
            structure: sections.structure.then_some(report.structure.as_slice()),
        },
    )?;

    let findings = match kind {
        DiffKind::Params => {
            for p in &report.params {
                println!(
                    "{}\t{} -> {}\t{}[{}]\tmean {}\tmax {}",
                    p.position, p.pair.0, p.pair.1, p.tensor_role, p.slot, p.mean_abs_diff, p.max_abs_diff
                );
            }
            report.params.iter().any(|p| p.max_abs_diff > 0.0)
        }
        DiffKind::Hypers => {
            for h in &report.hypers {
                println!(
                    "{}\t{} -> {}\t{}\t{}\t{}",
                    h.position,
                    h.pair.0,
                    h.pair.1,
                    h.attr_name,
                    attr_text(h.source_value.as_ref()),
                    attr_text(h.target_value.as_ref())
                );
            }
            !report.hypers.is_empty()
        }
        DiffKind::Graph => {
            println!(
                "aligned {} pairs, score {:.4}, source-only {}, target-only {}",
                report.alignment.pairs.len(),
                report.alignment.score,
                report.alignment.source_only.len(),
                report.alignment.target_only.len()
            );
            for s in &report.structure {
                println!("{}\t{}\t{}", s.position, s.kind.label(), s.location.join(" -> "));
            }
            !report.structure.is_empty()
        }
    };
    Ok(Status::from_findings(findings))
}

fn attr_text(value: Option<&nmif::AttrValue>) -> String {
    value.map_or_else(|| "-".to_string(), |v| serde_json::to_string(v).unwrap_or_default())
}

#[derive(Serialize)]
struct TraceOutput<'a> {
    source: &'a str,
    target: &'a str,
    tolerance: f64,
    alignment: &'a LayerAlignment,
    divergences: &'a [LayerDivergence],
}

fn trace(args: TraceArgs) -> Result<Status> {
    let ((source_label, source), (target_label, target)) = load_pair(&args.models, &args.select)?;
    let corpus = load_corpus(&args.corpus)?;
    let selected: Vec<(&CorpusInput, bool)> = if args.inputs.is_empty() {
        let records = differential::run_corpus(&[source.clone(), target.clone()], &corpus, args.k)?;
        let report = differential::compare_labels(&records, 0, 1);
        let mut chosen: Vec<(&CorpusInput, bool)> = report
            .triage
            .iter()
            .take(args.triage)
            .filter_map(|id| corpus.iter().find(|c| &c.id == id))
            .map(|c| (c, false))
            .collect();
        if let Some(control) = report.inputs.iter().find(|c| !c.discrepant) {
            chosen.extend(corpus.iter().find(|c| c.id == control.input_id).map(|c| (c, true)));
        }
        chosen
    } else {
        args.inputs
            .iter()
            .map(|id| corpus.iter().find(|c| &c.id == id).map(|c| (c, false)).with_context(|| format!("no corpus input {id}")))
            .collect::<Result<_>>()?
    };

    let alignment = diffcore::align_layers(&source, &target);
    let divergences = selected
        .iter()
        .map(|(input, control)| localize::trace_divergence(&source, &target, &alignment, input, args.tolerance, *control))
        .collect::<Result<Vec<_>, _>>()?;

    let out = out_dir(&args.out)?;
    if args.dump {
        for (input, _) in &selected {
            for (label, model) in [(&source_label, &source), (&target_label, &target)] {
                let t = interpreter::execute(model, &input.id, &input.tensor, true, args.k)?;
                let dir: PathBuf = out.join("activations").join(&input.id).join(label);
                interpreter::export_trace(&t, &dir)?;
            }
        }
    }
    write_json(
        &out.join("trace.json"),
        &TraceOutput {
            source: &source_label,
            target: &target_label,
            tolerance: args.tolerance,
            alignment: &alignment,
            divergences: &divergences,
        },
    )?;
    if divergences.is_empty() {
        println!("no discrepant inputs to trace");
    }
    for d in &divergences {
        let tag = if d.control { " (control)" } else { "" };
        match d.first_divergent_pair {
            Some(p) => {
                let (s, t) = &alignment.pairs[p];
                println!("{}{tag}: first divergent pair {p} ({s} -> {t})", d.input_id);
            }
            None => println!("{}{tag}: no divergence", d.input_id),
        }
    }
    Ok(Status::from_findings(divergences.iter().any(|d| !d.control && d.first_divergent_pair.is_some())))
}

fn load_chain_inputs(args: &ChainArgs) -> Result<(nmif::ConversionChain, Vec<CorpusInput>, LocalizeConfig)> {
    let chain = nmif::load_chain(&args.chain).with_context(|| format!("loading chain {}", args.chain.display()))?;
    let corpus = load_corpus(&args.corpus)?;
    let config = LocalizeConfig {
        k: args.k,
        triage: args.triage,
        tolerance: args.tolerance,
    };
    Ok((chain, corpus, config))
}

fn print_localization(report: &LocalizationReport) {
    println!(
        "rate: {:?} ({}/{})",
        report.discrepancy.rate, report.discrepancy.discrepant_inputs, report.discrepancy.total_inputs
    );
    if let Some((from, to)) = report.implicated_edge {
        println!("implicated edge: {from} -> {to} ({} -> {})", report.stage_labels[from], report.stage_labels[to]);
    }
    if let Some(p) = report.first_divergent_pair() {
        let (s, t) = &report.alignment.pairs[p];
        println!("first divergent pair: {p} ({s} -> {t})");
    }
    for s in &report.suspects {
        println!("suspect {}: [{}] {}", s.rank, s.position, s.summary);
    }
}

fn localize_cmd(args: ChainArgs) -> Result<Status> {
    let (chain, corpus, config) = load_chain_inputs(&args)?;
    let report = localize::localize(&chain, &corpus, &config)?;
    let out = out_dir(&args.out)?;
    write_json(&out.join("localization.json"), &report)?;
    localize::write_layers_csv(&report, &out.join("layers.csv"))?;
    print_localization(&report);
    Ok(Status::from_findings(!report.is_clean()))
}

fn repair_cmd(args: ChainArgs) -> Result<Status> {
    let (chain, corpus, config) = load_chain_inputs(&args)?;
    let result = repair::repair_chain(&chain, &corpus, &config)?;
    let out = out_dir(&args.out)?;
    write_json(&out.join("localization.json"), &result.report)?;
    let labels = chain.labels();
    let (source_label, target_label) = (&labels[0], &labels[labels.len() - 1]);
    let outcome = &result.session.outcome;
    repair::write_repair_log(
        &repair::RepairLog {
            source_stage: source_label,
            target_stage: target_label,
            skipped: &result.plan.skipped,
            steps: &result.session.steps,
            outcome,
        },
        &out.join("repair_log.json"),
    )?;
    let repaired_path = out.join(format!("{target_label}-repaired.nmif"));
    nmif::save_model(&result.session.repaired, &repaired_path)?;

    print_localization(&result.report);
    for skipped in &result.plan.skipped {
        println!("skipped suspect {}: {}", skipped.rank, skipped.reason);
    }
    for step in &result.session.steps {
        let status = if step.kept { "kept" } else { "rolled back" };
        match (&step.error, step.rate_after) {
            (Some(e), _) => println!("{}: {status} ({e})", step.action.description),
            (None, Some(after)) => println!("{}: {} -> {after}, {status}", step.action.description, step.rate_before),
            (None, None) => println!("{}: {status}", step.action.description),
        }
    }
    println!("verdict: {:?} ({} -> {})", outcome.verdict, outcome.rate_before, outcome.rate_after);
    println!("wrote {}", repaired_path.display());
    Ok(Status::from_findings(outcome.verdict != repair::Verdict::Resolved))
}

fn report(args: ReportArgs) -> Result<Status> {
    let file = if args.input.is_dir() { args.input.join("localization.json") } else { args.input.clone() };
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    let report: LocalizationReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
    let out = out_dir(&args.out)?;
    fs::write(out.join("layers.svg"), plot::layers_svg(&report))?;
    println!("wrote {}", out.join("layers.svg").display());

    let discrepancy = file.with_file_name("discrepancy.json");
    if discrepancy.is_file() {
        let text = fs::read_to_string(&discrepancy)?;
        let export: DiscrepancyExport = serde_json::from_str(&text).with_context(|| format!("parsing {}", discrepancy.display()))?;
        if let Some(rates) = &export.pairwise_rates {
            fs::write(out.join("heatmap.svg"), plot::heatmap_svg(&export.models, rates))?;
            println!("wrote {}", out.join("heatmap.svg").display());
        }
    }
    Ok(Status::Clean)
}

fn gen_fixture(args: GenFixtureArgs) -> Result<Status> {
    let params = FixtureParams {
        epsilon: args.epsilon,
        site: args.site,
        edge: args.edge,
        attr: args.attr,
        stages: args.stages,
        corpus_size: args.corpus_size,
    };
    let truth = fixture::gen_fixture(args.kind, args.seed, &params, &args.out)?;
    println!("{} (seed {}) -> {}", args.kind.name(), args.seed, args.out.display());
    if let (Some(site), Some(edge)) = (&truth.site, truth.edge) {
        println!("fault at {site}, edge {edge}");
    }
    Ok(Status::Clean)
}
