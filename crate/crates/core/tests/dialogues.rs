//! Scripted case-study dialogues replayed against the starter knowledge base.

use eq20_core::kb::starter_kb;
use eq20_core::ranking::PolicyKind;
use eq20_core::session::{replay_transcript, Fallback, SessionConfig, SessionStatus};

#[path = "support/dialogue_scripts.rs"]
mod scripts;

use scripts::{script, DIALOGUES};

#[test]
fn dialogues_identify_their_concept() {
    let kb = starter_kb();
    for policy in [PolicyKind::EntropyConditional, PolicyKind::EntropyInfogain] {
        for d in DIALOGUES {
            let cfg = SessionConfig {
                category: d.category.into(),
                policy,
                ..SessionConfig::default()
            };
            let s = replay_transcript(
                &kb,
                &cfg,
                d.opening,
                &script(d),
                &Fallback::TargetReference(d.target.into()),
            )
            .unwrap();
            let r = s.result().unwrap();
            println!("{policy} {}: {} turns {:?}", d.target, s.turn(), s.asked(&kb));
            assert_eq!(r.concept, d.target);
            assert_eq!(r.status, SessionStatus::Identified);
            assert!(s.turn() <= d.answers.len());
        }
    }
}

#[test]
fn scripted_answers_agree_with_reference() {
    let kb = starter_kb();
    for d in DIALOGUES {
        let m = kb.concept_index(d.target).unwrap();
        for (q, ans) in d.answers {
            let n = kb.question_index(q).unwrap();
            let cell = kb.cell(m, n).unwrap();
            for a in *ans {
                let l = kb.question(n).option_index(a).unwrap();
                assert!(cell.is_reference(l), "{} {q} {a}", d.target);
            }
        }
    }
}
