//! Prompt construction: the versioned pre-question generation prompt and
//! the composed reasoning prompts (with-pre-questions, plain baseline, and
//! the two-stage think-then-answer pair).
//!
//! Templates are paragraph-oriented. A paragraph consisting solely of
//! `{Task Instruction}` or `{Query}` is substituted, or dropped entirely
//! when that slot is empty, so no blank paragraphs leak into the output.
//! `{M}` expands to the requested question count and a paragraph containing
//! `{K}` is repeated once per k in 1..=m.

use crate::error::{QvixError, Result};
use crate::model::{Instance, PromptBundle, Sampling, TaskKind, TaskSpec, TemplateVersion};

const TEMPLATE_V0: &str = include_str!("templates/v0.txt");
const TEMPLATE_V1: &str = include_str!("templates/v1.txt");
const TEMPLATE_V2: &str = include_str!("templates/v2.txt");
const TEMPLATE_V3: &str = include_str!("templates/v3.txt");

/// Final instruction appended to every answer-eliciting prompt.
pub const ANSWER_DIRECTIVE: &str = "Answer with exactly one of the options.";

/// Trigger sentence for the first stage of the two-stage condition.
pub const COT_TRIGGER: &str = "Let's think step by step by looking at the image.";

/// Label prefixed to the model's own rationale in the second-stage prompt.
pub const RATIONALE_LABEL: &str = "Rationale:";

pub fn template_body(version: TemplateVersion) -> &'static str {
    let raw = match version {
        TemplateVersion::V0 => TEMPLATE_V0,
        TemplateVersion::V1 => TEMPLATE_V1,
        TemplateVersion::V2 => TEMPLATE_V2,
        TemplateVersion::V3 => TEMPLATE_V3,
    };
    raw.trim_end_matches('\n')
}

/// Render the text-only prompt that asks a model to write `m` pre-questions
/// for the given task instruction and per-instance query.
///
/// At least one of the two slots must be non-empty; prompts never mention
/// or attach the image.
pub fn render_pregen_prompt(
    version: TemplateVersion,
    task_instruction: &str,
    query: &str,
    m: usize,
) -> Result<String> {
    if m == 0 {
        return Err(QvixError::Invalid(
            "pre-question count must be at least 1".into(),
        ));
    }
    let instruction = task_instruction.trim();
    let query = query.trim();
    if instruction.is_empty() && query.is_empty() {
        return Err(QvixError::Invalid(
            "pre-question prompt needs a task instruction or a query".into(),
        ));
    }

    let m_str = m.to_string();
    let mut paragraphs: Vec<String> = Vec::new();
    for para in template_body(version).split("\n\n") {
        match para {
            "{Task Instruction}" => {
                if !instruction.is_empty() {
                    paragraphs.push(instruction.to_string());
                }
            }
            "{Query}" => {
                if !query.is_empty() {
                    paragraphs.push(query.to_string());
                }
            }
            _ if para.contains("{K}") => {
                for k in 1..=m {
                    paragraphs.push(para.replace("{K}", &k.to_string()).replace("{M}", &m_str));
                }
            }
            _ => paragraphs.push(para.replace("{M}", &m_str)),
        }
    }
    Ok(paragraphs.join("\n\n"))
}

fn option_letter(index: usize) -> char {
    char::from(b'A' + index as u8)
}

/// Render the options block: lettered lines for multiple choice, a plain
/// comma-separated list otherwise.
fn render_options(kind: TaskKind, options: &[String]) -> Result<String> {
    if options.is_empty() {
        return Err(QvixError::Invalid(
            "cannot render a prompt without options".into(),
        ));
    }
    match kind {
        TaskKind::VqaMultichoice => {
            if options.len() > crate::model::MAX_LETTERED_OPTIONS {
                return Err(QvixError::Invalid(format!(
                    "{} options exceed the lettered-option limit",
                    options.len()
                )));
            }
            Ok(options
                .iter()
                .enumerate()
                .map(|(i, o)| format!("({}) {}", option_letter(i), o))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        TaskKind::Classification | TaskKind::Entailment => Ok(options.join(", ")),
    }
}

fn question_blocks(instance: &Instance, task_spec: &TaskSpec) -> Result<Vec<String>> {
    let instruction = task_spec.task_instruction.trim();
    let query = instance.query.trim();
    if instruction.is_empty() && query.is_empty() {
        return Err(QvixError::Invalid(format!(
            "instance `{}` has neither a task instruction nor a query",
            instance.instance_id
        )));
    }
    let mut blocks = Vec::new();
    if !instruction.is_empty() {
        blocks.push(instruction.to_string());
    }
    if !query.is_empty() {
        blocks.push(query.to_string());
    }
    Ok(blocks)
}

fn image_ref(instance: &Instance) -> Result<&str> {
    let image = instance.image_ref.trim();
    if image.is_empty() {
        return Err(QvixError::Invalid(format!(
            "instance `{}` has no image reference",
            instance.instance_id
        )));
    }
    Ok(image)
}

/// Compose the full pre-question-conditioned prompt: image, then the
/// pre-questions (one per line), then instruction, query, options, and the
/// answer directive — one text block each, blank-line separated on the wire.
///
/// An empty pre-question slice simply omits that block, so the composition
/// degrades to exactly the baseline layout.
pub fn render_reasoning_prompt(
    instance: &Instance,
    task_spec: &TaskSpec,
    pre_questions: &[String],
    options: &[String],
) -> Result<PromptBundle> {
    if pre_questions.iter().any(|q| q.trim().is_empty()) {
        return Err(QvixError::Invalid("blank pre-question".into()));
    }
    let image = image_ref(instance)?;
    let mut blocks = Vec::new();
    if !pre_questions.is_empty() {
        blocks.push(pre_questions.join("\n"));
    }
    blocks.extend(question_blocks(instance, task_spec)?);
    blocks.push(render_options(task_spec.kind, options)?);
    blocks.push(ANSWER_DIRECTIVE.to_string());
    Ok(PromptBundle::user_turn(
        Some(image),
        blocks,
        Sampling::reasoning(),
    ))
}

/// Compose the plain direct-answer prompt: identical to the reasoning
/// prompt minus the pre-question block.
///
/// Deliberately built up from scratch rather than by delegating to
/// [`render_reasoning_prompt`], so tests can verify independently that the
/// with-pre-questions layout reduces to this one when the set is empty.
pub fn render_baseline_prompt(
    instance: &Instance,
    task_spec: &TaskSpec,
    options: &[String],
) -> Result<PromptBundle> {
    let image = image_ref(instance)?;
    let mut blocks = question_blocks(instance, task_spec)?;
    blocks.push(render_options(task_spec.kind, options)?);
    blocks.push(ANSWER_DIRECTIVE.to_string());
    Ok(PromptBundle::user_turn(
        Some(image),
        blocks,
        Sampling::reasoning(),
    ))
}

/// Stage one of the two-stage condition: elicit free-form reasoning with
/// the think-step-by-step trigger in place of the answer directive.
pub fn render_cot_rationale_prompt(
    instance: &Instance,
    task_spec: &TaskSpec,
    options: &[String],
) -> Result<PromptBundle> {
    let image = image_ref(instance)?;
    let mut blocks = question_blocks(instance, task_spec)?;
    blocks.push(render_options(task_spec.kind, options)?);
    blocks.push(COT_TRIGGER.to_string());
    Ok(PromptBundle::user_turn(
        Some(image),
        blocks,
        Sampling::reasoning(),
    ))
}

/// Stage two of the two-stage condition: the baseline prompt with the
/// stage-one rationale inserted (labelled) before the answer directive.
pub fn render_cot_answer_prompt(
    instance: &Instance,
    task_spec: &TaskSpec,
    options: &[String],
    rationale: &str,
) -> Result<PromptBundle> {
    let rationale = rationale.trim();
    if rationale.is_empty() {
        return Err(QvixError::Invalid(format!(
            "instance `{}` produced an empty rationale",
            instance.instance_id
        )));
    }
    let image = image_ref(instance)?;
    let mut blocks = question_blocks(instance, task_spec)?;
    blocks.push(render_options(task_spec.kind, options)?);
    blocks.push(format!("{RATIONALE_LABEL} {rationale}"));
    blocks.push(ANSWER_DIRECTIVE.to_string());
    Ok(PromptBundle::user_turn(
        Some(image),
        blocks,
        Sampling::reasoning(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use crate::model::{PregenPolicy, Part};

    fn task() -> TaskSpec {
        TaskSpec {
            task_id: "flowers".into(),
            kind: TaskKind::Classification,
            task_instruction: "What breed is the flower in the image?".into(),
            pregen_policy: PregenPolicy::PerDataset,
            label_schema: Some(vec!["rose".into(), "tulip".into()]),
            breakdown_keys: vec![],
        }
    }

    fn mc_task() -> TaskSpec {
        TaskSpec {
            task_id: "quiz".into(),
            kind: TaskKind::VqaMultichoice,
            task_instruction: String::new(),
            pregen_policy: PregenPolicy::PerInstance,
            label_schema: None,
            breakdown_keys: vec![],
        }
    }

    fn instance(query: &str) -> Instance {
        Instance {
            instance_id: "i1".into(),
            image_ref: "img/i1.png".into(),
            query: query.into(),
            options: None,
            gold: "rose".into(),
            tags: BTreeMap::new(),
        }
    }

    #[test]
    fn pregen_prompt_drops_empty_slots_without_blank_paragraphs() {
        let with_instruction =
            render_pregen_prompt(TemplateVersion::V0, "What breed is the flower in the image?", "", 4)
                .unwrap();
        assert!(!with_instruction.contains("\n\n\n"));
        assert!(!with_instruction.contains("{"));
        assert!(with_instruction.contains("What breed is the flower in the image?"));

        let with_query =
            render_pregen_prompt(TemplateVersion::V0, "", "Which animal is this?", 4).unwrap();
        assert!(!with_query.contains("\n\n\n"));
        assert!(with_query.contains("Which animal is this?"));
    }

    #[test]
    fn pregen_prompt_requires_some_question_text() {
        assert!(render_pregen_prompt(TemplateVersion::V0, "", "  ", 4).is_err());
        assert!(render_pregen_prompt(TemplateVersion::V0, "x", "", 0).is_err());
    }

    #[test]
    fn pregen_prompt_expands_count_and_format_lines() {
        for m in [1usize, 2, 6, 8] {
            let text =
                render_pregen_prompt(TemplateVersion::V0, "", "Which animal is this?", m).unwrap();
            assert!(text.contains(&format!("design {m} pre-questions")));
            for k in 1..=m {
                assert!(text.contains(&format!("Pre-question {k}: xxxx")));
            }
            assert!(!text.contains(&format!("Pre-question {}: xxxx", m + 1)));
        }
    }

    #[test]
    fn pregen_prompt_versions_differ_in_wording() {
        let rendered: Vec<String> = TemplateVersion::ALL
            .iter()
            .map(|&v| render_pregen_prompt(v, "x", "", 4).unwrap())
            .collect();
        for i in 0..rendered.len() {
            for j in i + 1..rendered.len() {
                assert_ne!(rendered[i], rendered[j]);
            }
        }
    }

    #[test]
    fn pregen_prompt_never_references_the_image_payload() {
        // The generator is text-only: rendered prompts must be plain strings
        // with no attachment placeholders.
        let text = render_pregen_prompt(TemplateVersion::V2, "inst", "query", 4).unwrap();
        assert!(!text.contains("data:image"));
        assert!(!text.contains('{') && !text.contains('}'));
    }

    #[test]
    fn reasoning_prompt_orders_blocks_and_leads_with_image() {
        let task = task();
        let inst = instance("");
        let pre = vec!["Q1?".to_string(), "Q2?".to_string()];
        let options = vec!["rose".to_string(), "tulip".to_string()];
        let bundle = render_reasoning_prompt(&inst, &task, &pre, &options).unwrap();
        bundle.validate().unwrap();
        assert_eq!(bundle.segments[0].parts[0], Part::Image("img/i1.png".into()));
        assert_eq!(
            bundle.joined_text(),
            "Q1?\nQ2?\n\nWhat breed is the flower in the image?\n\nrose, tulip\n\nAnswer with exactly one of the options."
        );
    }

    #[test]
    fn multichoice_options_are_lettered() {
        let task = mc_task();
        let mut inst = instance("Which of these states is farthest north?");
        let options = vec!["Maine".to_string(), "Georgia".to_string(), "Texas".to_string()];
        inst.options = Some(options.clone());
        inst.gold = "Maine".into();
        let bundle = render_baseline_prompt(&inst, &task, &options).unwrap();
        assert!(bundle
            .joined_text()
            .contains("(A) Maine\n(B) Georgia\n(C) Texas"));
    }

    #[test]
    fn empty_pre_question_set_reduces_to_the_baseline() {
        let task = task();
        let inst = instance("");
        let options = vec!["rose".to_string()];
        let reduced = render_reasoning_prompt(&inst, &task, &[], &options).unwrap();
        let baseline = render_baseline_prompt(&inst, &task, &options).unwrap();
        assert_eq!(reduced, baseline);
        // Blank (whitespace-only) questions are still rejected outright.
        let blank = vec!["ok?".to_string(), " ".to_string()];
        assert!(render_reasoning_prompt(&inst, &task, &blank, &options).is_err());
    }

    #[test]
    fn renderers_reject_missing_options_or_question() {
        let task = task();
        let inst = instance("");
        assert!(render_baseline_prompt(&inst, &task, &[]).is_err());

        let mut no_question = task.clone();
        no_question.task_instruction = String::new();
        let options = vec!["rose".to_string()];
        assert!(render_baseline_prompt(&inst, &no_question, &options).is_err());
    }

    #[test]
    fn cot_prompts_swap_trigger_for_directive_and_carry_rationale() {
        let task = task();
        let inst = instance("");
        let options = vec!["rose".to_string(), "tulip".to_string()];
        let stage_one = render_cot_rationale_prompt(&inst, &task, &options).unwrap();
        let text = stage_one.joined_text();
        assert!(text.ends_with(COT_TRIGGER));
        assert!(!text.contains(ANSWER_DIRECTIVE));

        let stage_two =
            render_cot_answer_prompt(&inst, &task, &options, "The petals are layered.").unwrap();
        let text = stage_two.joined_text();
        assert!(text.contains("Rationale: The petals are layered."));
        assert!(text.ends_with(ANSWER_DIRECTIVE));
        // The rationale sits right before the directive.
        let rationale_pos = text.find("Rationale:").unwrap();
        let directive_pos = text.find(ANSWER_DIRECTIVE).unwrap();
        assert!(rationale_pos < directive_pos);

        assert!(render_cot_answer_prompt(&inst, &task, &options, "  \n").is_err());
    }

    #[test]
    fn all_reasoning_bundles_use_greedy_decoding() {
        let task = task();
        let inst = instance("");
        let options = vec!["rose".to_string()];
        for bundle in [
            render_baseline_prompt(&inst, &task, &options).unwrap(),
            render_cot_rationale_prompt(&inst, &task, &options).unwrap(),
        ] {
            assert_eq!(bundle.sampling.temperature, 0.0);
        }
    }
}
