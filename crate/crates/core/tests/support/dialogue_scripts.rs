//! Case-study dialogues shared by the dialogue and acceptance tests.

use std::collections::HashMap;

pub struct Dialogue {
    pub target: &'static str,
    pub category: &'static str,
    pub opening: &'static str,
    pub answers: &'static [(&'static str, &'static [&'static str])],
}

pub const DIALOGUES: &[Dialogue] = &[
    Dialogue {
        target: "reconnaissance",
        category: "kill-chain-stages",
        opening: "",
        answers: &[
            ("kc-first-stage", &["yes"]),
            ("kc-active-probing", &["no"]),
            ("kc-gather-info", &["yes"]),
            ("kc-harvest-emails", &["yes"]),
        ],
    },
    Dialogue {
        target: "phishing",
        category: "attack-vectors",
        opening: "I received an email asking me to verify my account.",
        answers: &[
            ("av-delivery", &["a"]),
            ("av-goal", &["a"]),
            ("av-trusted-sender", &["yes"]),
            ("av-suspicious-url", &["yes"]),
            ("av-link-attachment", &["yes"]),
            ("av-entered-credentials", &["no"]),
            ("av-unusual-activity", &["no"]),
            ("av-emails-published", &["yes"]),
        ],
    },
    Dialogue {
        target: "ransomware",
        category: "attack-vectors",
        opening: "My computer suddenly showed a message saying my files are encrypted.",
        answers: &[
            ("av-impact", &["b"]),
            ("av-motivation", &["a"]),
            ("av-ransom-note", &["a"]),
            ("av-regain-access", &["a"]),
        ],
    },
    Dialogue {
        target: "sql-injection",
        category: "attack-vectors",
        opening: "Our website started showing strange database errors, and some user information got exposed after someone entered unusual characters into the login form.",
        answers: &[
            ("av-web-app", &["yes"]),
            ("av-input-fields", &["yes"]),
            ("av-db-commands", &["yes"]),
            ("av-expose-db", &["yes"]),
            ("av-input-validation", &["yes"]),
            ("av-sql-statements", &["yes"]),
        ],
    },
    Dialogue {
        target: "xss",
        category: "attack-vectors",
        opening: "When a user visits our website, malicious pop-ups appear and some pages automatically redirect to other websites.",
        answers: &[
            ("av-inject-scripts", &["yes"]),
            ("av-browser-exec", &["yes"]),
            ("av-session-hijack", &["yes"]),
            ("av-server-db", &["no"]),
            ("av-backend-access", &["no"]),
            ("av-vulnerable-inputs", &["yes"]),
        ],
    },
];

pub fn script(d: &Dialogue) -> HashMap<String, Vec<String>> {
    d.answers
        .iter()
        .map(|(q, a)| (q.to_string(), a.iter().map(|s| s.to_string()).collect()))
        .collect()
}
