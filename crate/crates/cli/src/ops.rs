//! Command implementations and their argument structs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use voxreport::morphology::Connectivity;
use voxreport::report::{
    run_mode, ReportError, ReportMode, StubReporter, TemplateTable,
};
use voxreport::roi::{prompt_from_structures, regional_prompts, RegionalPrompt};
use voxreport::seg_metrics::{evaluate, HdMode, SegScore};
use voxreport::synth::{synthesize, SynthConfig};
use voxreport::text_metrics::{bleu, rouge_n, TokenSeq, BLEU1_WEIGHTS, BLEU4_WEIGHTS};
use voxreport::vio;
use voxreport::volume::{AtlasLabelMap, BinaryMask, Volume};

/// Failures that abort a command, keyed to the exit-code contract.
pub enum CliError {
    /// Unreadable or malformed inputs, unwritable outputs (exit 2).
    Input(String),
    /// The lesion generator gave up (exit 3).
    Synthesis(String),
    /// Mode arguments missing or unresolvable (exit 4).
    Mode(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Synthesis(_) => 3,
            CliError::Mode(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Synthesis(m) | CliError::Mode(m) => m,
        }
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(path, e))
}

/// Shortest decimal that round-trips, always with a decimal point.
fn fmt_metric(v: f64) -> String {
    format!("{v:?}")
}

// ------------------------------------------------------------------ synth

#[derive(Args)]
pub struct SynthArgs {
    /// Input intensity volume (VVL1 f32).
    #[arg(long)]
    volume: PathBuf,
    /// Input atlas label map (VVL1 u16 with name table).
    #[arg(long)]
    atlas: PathBuf,
    /// Synthesis configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output volume with lesions applied.
    #[arg(long)]
    out_volume: PathBuf,
    /// Output anomaly mask.
    #[arg(long)]
    out_mask: PathBuf,
    /// Output lesion recipes (JSON).
    #[arg(long)]
    out_recipes: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs, seed: u64) -> Result<u8, CliError> {
    let volume = vio::read_volume(&args.volume).map_err(|e| input_err(&args.volume, e))?;
    let (atlas, _) = vio::read_atlas(&args.atlas).map_err(|e| input_err(&args.atlas, e))?;
    if atlas.dims() != volume.dims() {
        return Err(CliError::Input(format!(
            "atlas dims {:?} do not match volume dims {:?}",
            atlas.dims(),
            volume.dims()
        )));
    }
    let config = SynthConfig::from_json_str(&read_text(&args.config)?)
        .map_err(|e| input_err(&args.config, e))?;

    let out = synthesize(&volume, &atlas, &config, seed)
        .map_err(|e| CliError::Synthesis(e.to_string()))?;
    log::info!(
        "synthesized {} lesion(s) over {} voxels",
        out.recipes.len(),
        out.anomaly_mask.count_ones()
    );

    vio::write_volume(&args.out_volume, &out.volume)
        .map_err(|e| input_err(&args.out_volume, e))?;
    vio::write_mask(&args.out_mask, &out.anomaly_mask, volume.spacing())
        .map_err(|e| input_err(&args.out_mask, e))?;
    let recipes = serde_json::to_string_pretty(&out.recipes)
        .map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(&args.out_recipes, recipes + "\n").map_err(|e| input_err(&args.out_recipes, e))?;
    Ok(0)
}

// -------------------------------------------------------------------- roi

#[derive(Args)]
pub struct RoiArgs {
    /// Anomaly mask (VVL1 u8).
    #[arg(long)]
    anomaly: PathBuf,
    /// Atlas label map.
    #[arg(long)]
    atlas: PathBuf,
    /// Component connectivity: 6 or 26.
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    connectivity: Connectivity,
    /// Output prompt summary (JSON); prompt masks are written next to it.
    #[arg(long)]
    out: PathBuf,
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    match s {
        "6" => Ok(Connectivity::Six),
        "26" => Ok(Connectivity::TwentySix),
        other => Err(format!("connectivity must be 6 or 26, got {other}")),
    }
}

#[derive(Serialize)]
struct PromptSummary {
    component_index: usize,
    structure_labels: Vec<u16>,
    structure_names: Vec<String>,
    mask_popcount: usize,
}

fn prompt_mask_path(out: &Path, index: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("prompts");
    out.with_file_name(format!("{stem}_prompt_{index}.vvl"))
}

pub fn cmd_roi(args: &RoiArgs) -> Result<u8, CliError> {
    let (anomaly, spacing) = vio::read_mask(&args.anomaly).map_err(|e| input_err(&args.anomaly, e))?;
    let (atlas, _) = vio::read_atlas(&args.atlas).map_err(|e| input_err(&args.atlas, e))?;
    let prompts = regional_prompts(&anomaly, &atlas, args.connectivity)
        .map_err(|e| CliError::Input(e.to_string()))?;
    log::info!("{} regional prompt(s)", prompts.len());

    let mut summaries = Vec::with_capacity(prompts.len());
    for prompt in &prompts {
        let structure_labels: Vec<u16> = prompt.structure_labels.iter().copied().collect();
        let structure_names = structure_labels
            .iter()
            .map(|&l| atlas.name_of(l).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(e.to_string()))?;
        summaries.push(PromptSummary {
            component_index: prompt.component_index,
            structure_labels,
            structure_names,
            mask_popcount: prompt.mask.count_ones(),
        });
        let path = prompt_mask_path(&args.out, prompt.component_index);
        vio::write_mask(&path, &prompt.mask, spacing).map_err(|e| input_err(&path, e))?;
    }
    let json = serde_json::to_string_pretty(&summaries).map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(&args.out, json + "\n").map_err(|e| input_err(&args.out, e))?;
    Ok(0)
}

// ------------------------------------------------------------ seg-metrics

#[derive(Args)]
pub struct SegMetricsArgs {
    /// CSV manifest with one `prediction,ground_truth` path pair per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Hausdorff variant.
    #[arg(long, default_value = "symmetric", value_parser = parse_hd_mode)]
    hd_mode: HdMode,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

fn parse_hd_mode(s: &str) -> Result<HdMode, String> {
    match s {
        "directed" => Ok(HdMode::Directed),
        "symmetric" => Ok(HdMode::Symmetric),
        other => Err(format!("hd-mode must be directed or symmetric, got {other}")),
    }
}

fn seg_case(pred_path: &str, gt_path: &str, mode: HdMode) -> Result<SegScore, String> {
    let (pred, sp) = vio::read_mask(pred_path).map_err(|e| format!("{pred_path}: {e}"))?;
    let (gt, sg) = vio::read_mask(gt_path).map_err(|e| format!("{gt_path}: {e}"))?;
    if sp != sg {
        return Err(format!("spacing mismatch: {sp:?} vs {sg:?}"));
    }
    evaluate(&pred, &gt, sp, mode).map_err(|e| e.to_string())
}

pub fn cmd_seg_metrics(args: &SegMetricsArgs) -> Result<u8, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(&args.manifest)
        .map_err(|e| input_err(&args.manifest, e))?;
    let entries: Vec<Result<(String, String), String>> = reader
        .records()
        .map(|record| {
            let record = record.map_err(|e| e.to_string())?;
            if record.len() != 2 {
                return Err(format!("expected 2 fields, got {}", record.len()));
            }
            Ok((record[0].to_string(), record[1].to_string()))
        })
        .collect();

    let scores: Vec<Result<SegScore, String>> = entries
        .par_iter()
        .map(|entry| match entry {
            Ok((pred, gt)) => seg_case(pred, gt, args.hd_mode),
            Err(msg) => Err(msg.clone()),
        })
        .collect();

    let mut writer = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(&args.out)
        .map_err(|e| input_err(&args.out, e))?;
    writer
        .write_record(["case", "dsc", "pre", "se", "hd_mm"])
        .map_err(|e| input_err(&args.out, e))?;
    let mut failed = 0usize;
    for (i, score) in scores.iter().enumerate() {
        let case = (i + 1).to_string();
        let record: Vec<String> = match score {
            Ok(s) => vec![
                case,
                fmt_metric(s.dsc),
                s.pre.map(fmt_metric).unwrap_or_default(),
                s.se.map(fmt_metric).unwrap_or_default(),
                s.hd_mm.map(fmt_metric).unwrap_or_default(),
            ],
            Err(msg) => {
                failed += 1;
                log::warn!("case {case}: {msg}");
                vec![case, String::new(), String::new(), String::new(), String::new(), msg.clone()]
            }
        };
        writer.write_record(&record).map_err(|e| input_err(&args.out, e))?;
    }
    writer.flush().map_err(|e| input_err(&args.out, e))?;
    log::info!("{} case(s), {failed} failed", scores.len());
    Ok(if failed > 0 { 2 } else { 0 })
}

// ----------------------------------------------------------- text-metrics

#[derive(Args)]
pub struct TextMetricsArgs {
    /// Candidate reports, one per line.
    #[arg(long)]
    candidates: PathBuf,
    /// Reference reports, one per line, aligned with the candidates.
    #[arg(long)]
    references: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

fn text_line(candidate: &str, reference: &str) -> Result<(f64, f64, f64), String> {
    let cand = TokenSeq::tokenize(candidate);
    let refs = [TokenSeq::tokenize(reference)];
    let b1 = bleu(&cand, &refs, BLEU1_WEIGHTS).map_err(|e| e.to_string())?;
    let b4 = bleu(&cand, &refs, BLEU4_WEIGHTS).map_err(|e| e.to_string())?;
    let r1 = rouge_n(&cand, &refs, 1).map_err(|e| e.to_string())?;
    Ok((b1, b4, r1))
}

pub fn cmd_text_metrics(args: &TextMetricsArgs) -> Result<u8, CliError> {
    let candidates: Vec<String> = read_text(&args.candidates)?.lines().map(str::to_string).collect();
    let references: Vec<String> = read_text(&args.references)?.lines().map(str::to_string).collect();
    if candidates.len() != references.len() {
        return Err(CliError::Input(format!(
            "{} candidate line(s) vs {} reference line(s)",
            candidates.len(),
            references.len()
        )));
    }

    let rows: Vec<Result<(f64, f64, f64), String>> = candidates
        .par_iter()
        .zip(&references)
        .map(|(c, r)| text_line(c, r))
        .collect();

    let mut writer = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(&args.out)
        .map_err(|e| input_err(&args.out, e))?;
    writer
        .write_record(["line", "bleu1", "bleu4", "rouge1"])
        .map_err(|e| input_err(&args.out, e))?;
    let mut failed = 0usize;
    for (i, row) in rows.iter().enumerate() {
        let line = (i + 1).to_string();
        let record: Vec<String> = match row {
            Ok((b1, b4, r1)) => {
                vec![line, fmt_metric(*b1), fmt_metric(*b4), fmt_metric(*r1)]
            }
            Err(msg) => {
                failed += 1;
                log::warn!("line {line}: {msg}");
                vec![line, String::new(), String::new(), String::new(), msg.clone()]
            }
        };
        writer.write_record(&record).map_err(|e| input_err(&args.out, e))?;
    }
    writer.flush().map_err(|e| input_err(&args.out, e))?;
    Ok(if failed > 0 { 2 } else { 0 })
}

// ----------------------------------------------------------------- report

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Global,
    Autoseg,
    Prompt,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    atlas: PathBuf,
    /// Anomaly mask; required in autoseg mode.
    #[arg(long)]
    anomaly: Option<PathBuf>,
    /// Comma-separated structure names (case-insensitive); required in
    /// prompt mode.
    #[arg(long)]
    structures: Option<String>,
    /// Template table (JSON).
    #[arg(long)]
    templates: PathBuf,
    /// Emit JSON instead of plain text.
    #[arg(long)]
    json: bool,
}

fn resolve_structures(names_arg: &str, atlas: &AtlasLabelMap) -> Result<BTreeSet<u16>, CliError> {
    let by_name: std::collections::HashMap<String, u16> = atlas
        .label_names()
        .iter()
        .map(|(&label, name)| (name.to_lowercase(), label))
        .collect();
    let mut labels = BTreeSet::new();
    for raw in names_arg.split(',') {
        let name = raw.trim().to_lowercase();
        if name.is_empty() {
            return Err(CliError::Mode("empty structure name in --structures".into()));
        }
        match by_name.get(&name) {
            Some(&label) => {
                labels.insert(label);
            }
            None => return Err(CliError::Mode(format!("unknown structure name: {}", raw.trim()))),
        }
    }
    Ok(labels)
}

fn map_report_err(e: ReportError) -> CliError {
    match e {
        ReportError::MissingAnomalyMask | ReportError::MissingUserPrompts => {
            CliError::Mode(e.to_string())
        }
        other => CliError::Input(other.to_string()),
    }
}

#[derive(Serialize)]
struct RegionalJson {
    structures: Vec<String>,
    text: String,
}

#[derive(Serialize)]
struct ReportJson {
    global_text: String,
    regional: Vec<RegionalJson>,
}

pub fn cmd_report(args: &ReportArgs) -> Result<u8, CliError> {
    let volume = vio::read_volume(&args.volume).map_err(|e| input_err(&args.volume, e))?;
    let (atlas, _) = vio::read_atlas(&args.atlas).map_err(|e| input_err(&args.atlas, e))?;
    check_grid(&volume, atlas.dims())?;
    let anomaly = match &args.anomaly {
        Some(path) => {
            let (mask, _) = vio::read_mask(path).map_err(|e| input_err(path, e))?;
            check_grid(&volume, mask.dims())?;
            Some(mask)
        }
        None => None,
    };
    let templates = TemplateTable::from_json_str(&read_text(&args.templates)?)
        .map_err(|e| input_err(&args.templates, e))?;

    let reporter = StubReporter {
        anomaly: anomaly.clone().unwrap_or_else(|| BinaryMask::empty(volume.dims())),
        templates: templates.clone(),
    };
    let (mode, user_prompts): (ReportMode, Option<Vec<RegionalPrompt>>) = match args.mode {
        ModeArg::Global => (ReportMode::Global, None),
        ModeArg::Autoseg => (ReportMode::AutoSeg, None),
        ModeArg::Prompt => {
            let names_arg = args
                .structures
                .as_deref()
                .ok_or_else(|| CliError::Mode("prompt mode requires --structures".into()))?;
            let labels = resolve_structures(names_arg, &atlas)?;
            let prompt = prompt_from_structures(&atlas, &labels)
                .map_err(|e| CliError::Mode(e.to_string()))?;
            (ReportMode::Prompt, Some(vec![prompt]))
        }
    };

    let (global_text, regional) = run_mode(
        mode,
        &volume,
        &atlas,
        anomaly.as_ref(),
        user_prompts.as_deref(),
        &reporter,
        &templates,
    )
    .map_err(map_report_err)?;

    if args.json {
        let regional = regional
            .iter()
            .map(|r| {
                let structures = r
                    .prompt
                    .structure_labels
                    .iter()
                    .map(|&l| atlas.name_of(l).map(str::to_string))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Input(e.to_string()))?;
                Ok(RegionalJson { structures, text: r.text.clone() })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let payload = ReportJson { global_text, regional };
        let json = serde_json::to_string_pretty(&payload).map_err(|e| CliError::Input(e.to_string()))?;
        println!("{json}");
    } else {
        println!("{global_text}");
    }
    Ok(0)
}

fn check_grid(volume: &Volume, dims: voxreport::volume::Dims) -> Result<(), CliError> {
    if volume.dims() != dims {
        return Err(CliError::Input(format!(
            "grid dims {:?} do not match volume dims {:?}",
            dims,
            volume.dims()
        )));
    }
    Ok(())
}
