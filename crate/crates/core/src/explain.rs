//! Explanations built around the answer that moved the identified concept most.

use serde::{Deserialize, Serialize};

use crate::belief::TurnRecord;
use crate::error::KbError;
use crate::kb::KnowledgeBase;

/// One row of the jump table: how a turn changed the final concept's probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub turn: usize,
    pub question: String,
    pub answer: Vec<String>,
    pub before: f64,
    pub after: f64,
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotalPair {
    pub turn: usize,
    pub question: String,
    pub answer: Vec<String>,
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub concept: String,
    pub pivotal_question: String,
    pub pivotal_answer: Vec<String>,
    pub jump: f64,
    pub text: String,
    pub trace: Vec<TraceRow>,
}

/// Per-turn probability of `concept` (position within the category) before
/// and after each answer. Turns are numbered from 1.
pub fn trace_report(history: &[TurnRecord], concept: usize) -> Vec<TraceRow> {
    history
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let before = rec.before[concept];
            let after = rec.after[concept];
            TraceRow {
                turn: i + 1,
                question: rec.question.clone(),
                answer: rec.selected.clone(),
                before,
                after,
                jump: after - before,
            }
        })
        .collect()
}

/// The turn with the largest jump for `concept`; the earliest turn wins ties.
/// `None` for an empty history.
pub fn pivotal_pair(history: &[TurnRecord], concept: usize) -> Option<PivotalPair> {
    let rows = trace_report(history, concept);
    let mut best: Option<&TraceRow> = None;
    for row in &rows {
        if best.is_none_or(|b| row.jump > b.jump) {
            best = Some(row);
        }
    }
    best.map(|r| PivotalPair {
        turn: r.turn,
        question: r.question.clone(),
        answer: r.answer.clone(),
        jump: r.jump,
    })
}

/// Fills the explanation template for `concept` (a concept id) around the
/// pivotal pair.
pub fn generate_explanation(
    kb: &KnowledgeBase,
    concept: &str,
    pivotal: &PivotalPair,
    trace: Vec<TraceRow>,
) -> Result<Explanation, KbError> {
    let c = kb.concept(kb.concept_index(concept)?);
    let q = kb.question(kb.question_index(&pivotal.question)?);
    let texts = pivotal
        .answer
        .iter()
        .map(|id| {
            q.options
                .iter()
                .find(|o| &o.id == id)
                .map(|o| o.text.as_str())
                .ok_or_else(|| KbError::Reference(format!("option `{id}` of question `{}`", q.id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if texts.is_empty() {
        return Err(KbError::Reference(format!("empty answer for question `{}`", q.id)));
    }
    let text = format!(
        "Based on your answer that {} to '{}', the most likely threat is {}. {}",
        texts.join(" and "),
        q.text,
        c.name,
        c.description
    );
    Ok(Explanation {
        concept: c.id.clone(),
        pivotal_question: pivotal.question.clone(),
        pivotal_answer: pivotal.answer.clone(),
        jump: pivotal.jump,
        text,
        trace,
    })
}

/// Trace, pivotal pair and rendered text in one step. `concept` is the
/// global concept index; `category` locates it within the belief vectors.
pub fn explain(
    kb: &KnowledgeBase,
    category: &str,
    history: &[TurnRecord],
    concept: usize,
) -> Result<Option<Explanation>, KbError> {
    let slot = kb
        .category_concepts(category)?
        .iter()
        .position(|&m| m == concept)
        .ok_or_else(|| KbError::Reference(format!("concept {concept} is not in category `{category}`")))?;
    let Some(pivotal) = pivotal_pair(history, slot) else {
        return Ok(None);
    };
    let trace = trace_report(history, slot);
    generate_explanation(kb, &kb.concept(concept).id, &pivotal, trace).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::starter_kb;

    fn rec(q: &str, before: f64, after: f64) -> TurnRecord {
        TurnRecord {
            question: q.into(),
            selected: vec!["yes".into()],
            before: vec![before, 1.0 - before],
            after: vec![after, 1.0 - after],
        }
    }

    #[test]
    fn pivotal_is_largest_jump() {
        let h = vec![rec("q1", 0.1, 0.2), rec("q2", 0.2, 0.6), rec("q3", 0.6, 0.8)];
        let p = pivotal_pair(&h, 0).unwrap();
        assert_eq!(p.turn, 2);
        assert_eq!(p.question, "q2");
        assert!((p.jump - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_earliest_turn() {
        let h = vec![rec("q1", 0.0, 0.25), rec("q2", 0.25, 0.5), rec("q3", 0.5, 0.75)];
        assert_eq!(pivotal_pair(&h, 0).unwrap().turn, 1);
        let h = vec![rec("only", 0.5, 0.4)];
        let p = pivotal_pair(&h, 0).unwrap();
        assert_eq!((p.turn, p.question.as_str()), (1, "only"));
        assert!(pivotal_pair(&[], 0).is_none());
    }

    #[test]
    fn trace_telescopes() {
        let h = vec![rec("q1", 0.25, 0.5), rec("q2", 0.5, 0.9)];
        let t = trace_report(&h, 0);
        assert!((t[0].jump - 0.25).abs() < 1e-15);
        assert!((t[1].jump - 0.4).abs() < 1e-15);
        let sum: f64 = t.iter().map(|r| r.jump).sum();
        assert!((sum - 0.65).abs() < 1e-12);
        assert!(trace_report(&[], 0).is_empty());
        // the other concept sees the mirrored negative jumps
        assert!(trace_report(&h, 1).iter().all(|r| r.jump < 0.0));
    }

    #[test]
    fn phishing_text_uses_deceptive_email() {
        let kb = starter_kb();
        let pivotal = PivotalPair {
            turn: 1,
            question: "av-delivery".into(),
            answer: vec!["a".into()],
            jump: 0.7,
        };
        let e = generate_explanation(&kb, "phishing", &pivotal, vec![]).unwrap();
        assert!(e.text.to_lowercase().contains("deceptive email"));
        assert!(e
            .text
            .starts_with("Based on your answer that Deceptive email to 'How is the attack delivered?'"));
        assert!(e.text.contains("the most likely threat is Phishing."));
        assert!(e.text.contains(
            "Phishing is a social engineering attack in which adversaries convince users to reveal sensitive data"
        ));
    }

    #[test]
    fn multi_option_answers_join_with_and() {
        let kb = starter_kb();
        let pivotal = PivotalPair {
            turn: 1,
            question: "av-impact".into(),
            answer: vec!["a".into(), "c".into()],
            jump: 0.1,
        };
        let e = generate_explanation(&kb, "phishing", &pivotal, vec![]).unwrap();
        assert!(e.text.contains("Data is stolen and Data is publicly exposed"));
    }

    #[test]
    fn reconnaissance_text_embeds_description() {
        let kb = starter_kb();
        let pivotal = PivotalPair {
            turn: 1,
            question: "kc-first-stage".into(),
            answer: vec!["yes".into()],
            jump: 0.5,
        };
        let e = generate_explanation(&kb, "reconnaissance", &pivotal, vec![]).unwrap();
        assert!(e.text.contains("Reconnaissance is the initial phase of a cyber-attack"));
    }

    #[test]
    fn dangling_ids_are_errors() {
        let kb = starter_kb();
        let mut p = PivotalPair {
            turn: 1,
            question: "av-delivery".into(),
            answer: vec!["z".into()],
            jump: 0.0,
        };
        assert!(generate_explanation(&kb, "phishing", &p, vec![]).is_err());
        p.answer = vec!["a".into()];
        assert!(generate_explanation(&kb, "nobody", &p, vec![]).is_err());
        p.question = "nothing".into();
        assert!(generate_explanation(&kb, "phishing", &p, vec![]).is_err());
    }
}
