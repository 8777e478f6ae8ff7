//! Template-based report assembly over regional prompts, with a pluggable
//! reporter contract and a deterministic intensity-statistics stub standing
//! in for a learned decoder.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::morphology::Connectivity;
use crate::roi::{global_prompt, regional_prompts, RegionalPrompt, RoiError};
use crate::volume::{AtlasLabelMap, BinaryMask, Dims, Volume, VolumeError};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("prompt mask is empty")]
    EmptyPrompt,
    #[error("autoseg mode requires an anomaly mask")]
    MissingAnomalyMask,
    #[error("prompt mode requires at least one user prompt")]
    MissingUserPrompts,
    #[error("reporter returned empty text")]
    EmptyReportText,
    #[error("grid dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Dims, Dims),
    #[error("bad template table: {0}")]
    BadTemplates(String),
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// Sentence emitted for an anomaly component that touches no labelled
/// structure.
pub const BACKGROUND_FINDING: &str = "abnormal signal outside the labeled structures";

/// Normal-finding sentences per structure name, plus a fallback pattern.
///
/// Loadable from a JSON object mapping structure name to sentence with a
/// required `"__fallback__"` key; lookups are case-insensitive. The fallback
/// may contain `{structure}`, replaced by the structure's name.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateTable {
    by_name: BTreeMap<String, String>,
    fallback: String,
}

pub const FALLBACK_KEY: &str = "__fallback__";

impl TemplateTable {
    pub fn new(by_name: BTreeMap<String, String>, fallback: String) -> Self {
        let by_name = by_name.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
        TemplateTable { by_name, fallback }
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> =
            serde_json::from_str(json).map_err(|e| ReportError::BadTemplates(e.to_string()))?;
        let fallback = map
            .remove(FALLBACK_KEY)
            .ok_or_else(|| ReportError::BadTemplates(format!("missing \"{FALLBACK_KEY}\" key")))?;
        Ok(Self::new(map, fallback))
    }

    /// The normal sentence for a structure, falling back to the fallback
    /// pattern with `{structure}` substituted.
    pub fn sentence_for(&self, name: &str) -> String {
        match self.by_name.get(&name.to_lowercase()) {
            Some(s) => s.clone(),
            None => self.fallback.replace("{structure}", name),
        }
    }
}

/// A report for one prompted region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalReport {
    pub prompt: RegionalPrompt,
    pub text: String,
    pub modality_tag: String,
}

/// The pluggable text generator: deterministic for fixed inputs.
pub trait Reporter {
    fn report(&self, volume: &Volume, prompt: &RegionalPrompt, atlas: &AtlasLabelMap) -> Result<String>;
}

fn mean_over(volume: &Volume, mask: &BinaryMask) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in mask.iter_true() {
        sum += volume.at_linear(i) as f64;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Deterministic stand-in for the neural decoder: per structure in the
/// prompt's scope (all structures for a global prompt), compares the mean
/// intensity of `anomaly and structure` against `structure minus anomaly`
/// and emits "<hyperintense|hypointense> signal in the <name>", or the
/// structure's template sentence when the anomaly misses it. Sentences are
/// joined with ". " in ascending label order.
pub fn stub_report(
    volume: &Volume,
    prompt: &RegionalPrompt,
    atlas: &AtlasLabelMap,
    anomaly: &BinaryMask,
    templates: &TemplateTable,
) -> Result<String> {
    for dims in [atlas.dims(), prompt.mask.dims(), anomaly.dims()] {
        if dims != volume.dims() {
            return Err(ReportError::DimsMismatch(volume.dims(), dims));
        }
    }
    if !prompt.mask.any() {
        return Err(ReportError::EmptyPrompt);
    }
    let scope: Vec<u16> = if prompt.is_global {
        atlas.labels_present()
    } else {
        prompt.structure_labels.iter().copied().collect()
    };
    if scope.is_empty() {
        return Ok(if prompt.is_global {
            "no labeled structures in view".to_string()
        } else {
            BACKGROUND_FINDING.to_string()
        });
    }
    let mut sentences = Vec::with_capacity(scope.len());
    for label in scope {
        let name = atlas.name_of(label)?;
        let structure = atlas.structure_mask(label)?;
        let overlap = structure.and(anomaly);
        if !overlap.any() {
            sentences.push(templates.sentence_for(name));
            continue;
        }
        let inside = mean_over(volume, &overlap).expect("overlap checked non-empty");
        // Reference tissue: the structure outside the anomaly, widening to
        // the brain outside the anomaly, then the whole volume, whenever the
        // narrower region is empty.
        let outside = mean_over(volume, &structure.and_not(anomaly))
            .or_else(|| mean_over(volume, &atlas.brain_mask().and_not(anomaly)))
            .unwrap_or_else(|| {
                volume.data().iter().map(|&v| v as f64).sum::<f64>() / volume.data().len() as f64
            });
        let kind = if inside > outside { "hyperintense" } else { "hypointense" };
        sentences.push(format!("{kind} signal in the {name}"));
    }
    Ok(sentences.join(". "))
}

/// The stub packaged as a [`Reporter`].
pub struct StubReporter {
    pub anomaly: BinaryMask,
    pub templates: TemplateTable,
}

impl Reporter for StubReporter {
    fn report(&self, volume: &Volume, prompt: &RegionalPrompt, atlas: &AtlasLabelMap) -> Result<String> {
        stub_report(volume, prompt, atlas, &self.anomaly, &self.templates)
    }
}

/// Concatenates regional texts in input order, then appends the template
/// sentence of every structure not covered by any prompt, ascending by
/// label. A global prompt counts as covering everything. Parts are joined
/// with newlines.
pub fn assemble_global(regional: &[RegionalReport], atlas: &AtlasLabelMap, templates: &TemplateTable) -> String {
    let mut covered: BTreeSet<u16> = BTreeSet::new();
    let mut all_covered = false;
    let mut parts: Vec<String> = Vec::new();
    for r in regional {
        all_covered |= r.prompt.is_global;
        covered.extend(r.prompt.structure_labels.iter().copied());
        parts.push(r.text.clone());
    }
    if !all_covered {
        for label in atlas.labels_present() {
            if !covered.contains(&label) {
                let name = atlas.name_of(label).expect("present labels are named");
                parts.push(templates.sentence_for(name));
            }
        }
    }
    parts.join("\n")
}

/// Inference mode for [`run_mode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportMode {
    /// One reporter call on the all-one prompt; its text is returned verbatim.
    Global,
    /// Prompts derived from the anomaly mask's connected components.
    AutoSeg,
    /// Caller-supplied prompts.
    Prompt,
}

/// Runs one of the three inference modes and returns the global text plus
/// the regional reports behind it.
pub fn run_mode(
    mode: ReportMode,
    volume: &Volume,
    atlas: &AtlasLabelMap,
    anomaly: Option<&BinaryMask>,
    user_prompts: Option<&[RegionalPrompt]>,
    reporter: &dyn Reporter,
    templates: &TemplateTable,
) -> Result<(String, Vec<RegionalReport>)> {
    let describe = |prompt: RegionalPrompt| -> Result<RegionalReport> {
        let text = reporter.report(volume, &prompt, atlas)?;
        if text.is_empty() {
            return Err(ReportError::EmptyReportText);
        }
        Ok(RegionalReport { prompt, text, modality_tag: String::new() })
    };
    match mode {
        ReportMode::Global => {
            let report = describe(global_prompt(volume.dims()))?;
            Ok((report.text.clone(), vec![report]))
        }
        ReportMode::AutoSeg => {
            let anomaly = anomaly.ok_or(ReportError::MissingAnomalyMask)?;
            let prompts = regional_prompts(anomaly, atlas, Connectivity::TwentySix)?;
            let regional: Vec<RegionalReport> = prompts.into_iter().map(describe).collect::<Result<_>>()?;
            Ok((assemble_global(&regional, atlas, templates), regional))
        }
        ReportMode::Prompt => {
            let prompts = user_prompts.filter(|p| !p.is_empty()).ok_or(ReportError::MissingUserPrompts)?;
            let regional: Vec<RegionalReport> =
                prompts.iter().cloned().map(describe).collect::<Result<_>>()?;
            Ok((assemble_global(&regional, atlas, templates), regional))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::prompt_from_structures;
    use crate::volume::Volume;

    // 6^3 atlas with three 2x2x2 block structures on a background.
    fn fixture() -> (Volume, AtlasLabelMap, TemplateTable) {
        let dims = Dims::new(6, 6, 6).unwrap();
        let mut labels = vec![0u16; dims.voxel_count()];
        let blocks = [(1u16, 0usize), (2u16, 2usize), (3u16, 4usize)];
        for &(label, x0) in &blocks {
            for z in 0..2 {
                for y in 0..2 {
                    for x in x0..x0 + 2 {
                        labels[dims.index(x, y, z)] = label;
                    }
                }
            }
        }
        let names: BTreeMap<u16, String> =
            [(1u16, "alpha region".into()), (2u16, "beta region".into()), (3u16, "gamma region".into())].into();
        let atlas = AtlasLabelMap::new(dims, labels, names).unwrap();
        let volume = Volume::filled(dims, (1.0, 1.0, 1.0), 10.0).unwrap();
        let templates = TemplateTable::from_json_str(
            r#"{
                "alpha region": "the alpha region is unremarkable",
                "beta region": "the beta region is unremarkable",
                "__fallback__": "the {structure} shows no abnormality"
            }"#,
        )
        .unwrap();
        (volume, atlas, templates)
    }

    fn lesion_at(dims: Dims, voxels: &[(usize, usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(dims);
        for &(x, y, z) in voxels {
            m.set(x, y, z, true);
        }
        m
    }

    fn raise(volume: &Volume, mask: &BinaryMask, delta: f32) -> Volume {
        let data = volume
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.get_linear(i) { v + delta } else { v })
            .collect();
        volume.with_data(data).unwrap()
    }

    #[test]
    fn no_overlap_yields_template_sentence() {
        let (volume, atlas, templates) = fixture();
        let anomaly = BinaryMask::empty(atlas.dims());
        let prompt = prompt_from_structures(&atlas, &[1u16].into_iter().collect()).unwrap();
        let text = stub_report(&volume, &prompt, &atlas, &anomaly, &templates).unwrap();
        assert_eq!(text, "the alpha region is unremarkable");
    }

    #[test]
    fn fallback_substitutes_structure_name() {
        let (volume, atlas, templates) = fixture();
        let anomaly = BinaryMask::empty(atlas.dims());
        let prompt = prompt_from_structures(&atlas, &[3u16].into_iter().collect()).unwrap();
        let text = stub_report(&volume, &prompt, &atlas, &anomaly, &templates).unwrap();
        assert_eq!(text, "the gamma region shows no abnormality");
    }

    #[test]
    fn hyper_and_hypo_lesions_are_classified() {
        let (volume, atlas, templates) = fixture();
        let anomaly = lesion_at(atlas.dims(), &[(0, 0, 0), (1, 0, 0)]);
        let prompt = prompt_from_structures(&atlas, &[1u16].into_iter().collect()).unwrap();

        let hyper = raise(&volume, &anomaly, 8.0);
        let text = stub_report(&hyper, &prompt, &atlas, &anomaly, &templates).unwrap();
        assert_eq!(text, "hyperintense signal in the alpha region");

        let hypo = raise(&volume, &anomaly, -8.0);
        let text = stub_report(&hypo, &prompt, &atlas, &anomaly, &templates).unwrap();
        assert_eq!(text, "hypointense signal in the alpha region");
    }

    #[test]
    fn two_affected_structures_join_in_ascending_order() {
        let (volume, atlas, templates) = fixture();
        let anomaly = lesion_at(atlas.dims(), &[(0, 0, 0), (4, 0, 0)]);
        let volume = raise(&volume, &anomaly, 5.0);
        let prompt = prompt_from_structures(&atlas, &[1u16, 3].into_iter().collect()).unwrap();
        let text = stub_report(&volume, &prompt, &atlas, &anomaly, &templates).unwrap();
        assert_eq!(
            text,
            "hyperintense signal in the alpha region. hyperintense signal in the gamma region"
        );
    }

    #[test]
    fn background_component_gets_fixed_sentence() {
        let (volume, atlas, templates) = fixture();
        let anomaly = lesion_at(atlas.dims(), &[(5, 5, 5)]);
        let prompts = regional_prompts(&anomaly, &atlas, Connectivity::TwentySix).unwrap();
        let text = stub_report(&volume, &prompts[0], &atlas, &anomaly, &templates).unwrap();
        assert_eq!(text, BACKGROUND_FINDING);
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let (volume, atlas, templates) = fixture();
        let anomaly = BinaryMask::empty(atlas.dims());
        let prompt = RegionalPrompt {
            component_index: 0,
            structure_labels: BTreeSet::new(),
            mask: BinaryMask::empty(atlas.dims()),
            is_global: false,
        };
        assert_eq!(
            stub_report(&volume, &prompt, &atlas, &anomaly, &templates),
            Err(ReportError::EmptyPrompt)
        );
    }

    #[test]
    fn assemble_empty_list_is_pure_template_report() {
        let (_, atlas, templates) = fixture();
        let text = assemble_global(&[], &atlas, &templates);
        assert_eq!(
            text,
            "the alpha region is unremarkable\nthe beta region is unremarkable\nthe gamma region shows no abnormality"
        );
    }

    #[test]
    fn assemble_full_coverage_is_regional_text_alone() {
        let (_, atlas, templates) = fixture();
        let prompt = prompt_from_structures(&atlas, &[1u16, 2, 3].into_iter().collect()).unwrap();
        let report = RegionalReport { prompt, text: "all three look odd".into(), modality_tag: String::new() };
        assert_eq!(assemble_global(&[report], &atlas, &templates), "all three look odd");
    }

    #[test]
    fn assemble_partial_coverage_appends_missing_templates() {
        let (_, atlas, templates) = fixture();
        let prompt = prompt_from_structures(&atlas, &[2u16].into_iter().collect()).unwrap();
        let report = RegionalReport { prompt, text: "focal finding in the beta region".into(), modality_tag: String::new() };
        assert_eq!(
            assemble_global(&[report], &atlas, &templates),
            "focal finding in the beta region\nthe alpha region is unremarkable\nthe gamma region shows no abnormality"
        );
    }

    fn stub(atlas: &AtlasLabelMap, anomaly: &BinaryMask, templates: &TemplateTable) -> StubReporter {
        let _ = atlas;
        StubReporter { anomaly: anomaly.clone(), templates: templates.clone() }
    }

    #[test]
    fn global_mode_returns_reporter_text_verbatim() {
        let (volume, atlas, templates) = fixture();
        let anomaly = BinaryMask::empty(atlas.dims());
        let reporter = stub(&atlas, &anomaly, &templates);
        let (text, regional) =
            run_mode(ReportMode::Global, &volume, &atlas, None, None, &reporter, &templates).unwrap();
        assert_eq!(regional.len(), 1);
        assert!(regional[0].prompt.is_global);
        assert_eq!(text, regional[0].text);
    }

    #[test]
    fn autoseg_empty_anomaly_is_all_templates() {
        let (volume, atlas, templates) = fixture();
        let anomaly = BinaryMask::empty(atlas.dims());
        let reporter = stub(&atlas, &anomaly, &templates);
        let (text, regional) =
            run_mode(ReportMode::AutoSeg, &volume, &atlas, Some(&anomaly), None, &reporter, &templates).unwrap();
        assert!(regional.is_empty());
        assert_eq!(text, assemble_global(&[], &atlas, &templates));
    }

    #[test]
    fn autoseg_orders_reports_by_component() {
        let (volume, atlas, templates) = fixture();
        // Big lesion in gamma (3 voxels), small in alpha (1 voxel).
        let anomaly = lesion_at(atlas.dims(), &[(4, 0, 0), (5, 0, 0), (4, 1, 0), (0, 0, 0)]);
        let volume = raise(&volume, &anomaly, 5.0);
        let reporter = stub(&atlas, &anomaly, &templates);
        let (_, regional) =
            run_mode(ReportMode::AutoSeg, &volume, &atlas, Some(&anomaly), None, &reporter, &templates).unwrap();
        assert_eq!(regional.len(), 2);
        assert_eq!(regional[0].prompt.structure_labels, [3u16].into_iter().collect());
        assert_eq!(regional[1].prompt.structure_labels, [1u16].into_iter().collect());
    }

    #[test]
    fn prompt_mode_with_auto_prompts_matches_autoseg() {
        let (volume, atlas, templates) = fixture();
        let anomaly = lesion_at(atlas.dims(), &[(0, 0, 0), (2, 1, 1), (5, 5, 5)]);
        let volume = raise(&volume, &anomaly, 6.0);
        let reporter = stub(&atlas, &anomaly, &templates);
        let (auto_text, _) =
            run_mode(ReportMode::AutoSeg, &volume, &atlas, Some(&anomaly), None, &reporter, &templates).unwrap();
        let prompts = regional_prompts(&anomaly, &atlas, Connectivity::TwentySix).unwrap();
        let (prompt_text, _) =
            run_mode(ReportMode::Prompt, &volume, &atlas, None, Some(&prompts), &reporter, &templates).unwrap();
        assert_eq!(auto_text, prompt_text);
    }

    #[test]
    fn every_structure_appears_exactly_once() {
        let (volume, atlas, templates) = fixture();
        let anomaly = lesion_at(atlas.dims(), &[(2, 0, 0), (3, 0, 0)]);
        let volume = raise(&volume, &anomaly, 5.0);
        let reporter = stub(&atlas, &anomaly, &templates);
        let (text, _) =
            run_mode(ReportMode::AutoSeg, &volume, &atlas, Some(&anomaly), None, &reporter, &templates).unwrap();
        for name in ["alpha region", "beta region", "gamma region"] {
            assert_eq!(text.matches(name).count(), 1, "{name} in {text:?}");
        }
    }

    #[test]
    fn mode_argument_errors() {
        let (volume, atlas, templates) = fixture();
        let anomaly = BinaryMask::empty(atlas.dims());
        let reporter = stub(&atlas, &anomaly, &templates);
        assert!(matches!(
            run_mode(ReportMode::AutoSeg, &volume, &atlas, None, None, &reporter, &templates),
            Err(ReportError::MissingAnomalyMask)
        ));
        assert!(matches!(
            run_mode(ReportMode::Prompt, &volume, &atlas, None, Some(&[]), &reporter, &templates),
            Err(ReportError::MissingUserPrompts)
        ));
    }

    #[test]
    fn template_table_requires_fallback() {
        assert!(matches!(
            TemplateTable::from_json_str(r#"{"a": "b"}"#),
            Err(ReportError::BadTemplates(_))
        ));
        assert!(TemplateTable::from_json_str("not json").is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let (volume, atlas, templates) = fixture();
        let anomaly = lesion_at(atlas.dims(), &[(0, 0, 0), (4, 4, 0)]);
        let volume = raise(&volume, &anomaly, 3.0);
        let reporter = stub(&atlas, &anomaly, &templates);
        let a = run_mode(ReportMode::AutoSeg, &volume, &atlas, Some(&anomaly), None, &reporter, &templates).unwrap();
        let b = run_mode(ReportMode::AutoSeg, &volume, &atlas, Some(&anomaly), None, &reporter, &templates).unwrap();
        assert_eq!(a.0, b.0);
    }
}
