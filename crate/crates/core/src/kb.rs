//! Reference matrix of concepts × questions.
//!
//! The on-disk document is JSON with a fixed schema (`version`, `categories`,
//! `concepts`, `questions`, `cells`). Unknown keys are rejected so typos in
//! hand-edited files surface at load time.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::KbError;

pub const KB_VERSION: u32 = 1;

const STARTER_KB: &str = include_str!("../data/starter_kb.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub category: String,
    pub description: String,
    pub prior_weight: f64,
    #[serde(default)]
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerOption {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub category: String,
    pub options: Vec<AnswerOption>,
}

impl Question {
    pub fn option_index(&self, option_id: &str) -> Option<usize> {
        self.options.iter().position(|o| o.id == option_id)
    }

    pub fn num_options(&self) -> usize {
        self.options.len()
    }
}

/// One entry of the reference matrix. Option sets are stored as indices into
/// the owning question's option list.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCell {
    pub concept: usize,
    pub question: usize,
    /// Sorted, non-empty.
    pub reference: Vec<usize>,
    /// One count per option of the question.
    pub frequencies: Vec<u64>,
}

impl MatrixCell {
    pub fn is_reference(&self, option: usize) -> bool {
        self.reference.binary_search(&option).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct CategoryIndex {
    concepts: Vec<usize>,
    questions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    categories: Vec<Category>,
    concepts: Vec<Concept>,
    questions: Vec<Question>,
    cells: Vec<MatrixCell>,
    concept_ids: HashMap<String, usize>,
    question_ids: HashMap<String, usize>,
    cell_index: HashMap<(usize, usize), usize>,
    by_category: HashMap<String, CategoryIndex>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellDoc {
    concept: String,
    question: String,
    reference: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    frequencies: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KbDocument {
    version: u32,
    categories: Vec<Category>,
    concepts: Vec<Concept>,
    questions: Vec<Question>,
    cells: Vec<CellDoc>,
}

/// Parses and validates a knowledge base document.
pub fn load_kb(document: &str) -> Result<KnowledgeBase, KbError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: KbDocument = serde_path_to_error::deserialize(de).map_err(|e| KbError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    KnowledgeBase::from_document(doc)
}

pub fn load_kb_bytes(document: &[u8]) -> Result<KnowledgeBase, KbError> {
    let text = std::str::from_utf8(document).map_err(|e| KbError::Parse {
        path: ".".into(),
        message: e.to_string(),
    })?;
    load_kb(text)
}

/// The knowledge base shipped with the crate (attack vectors and kill-chain stages).
pub fn starter_kb() -> KnowledgeBase {
    load_kb(STARTER_KB).expect("bundled starter knowledge base is valid")
}

pub fn starter_kb_document() -> &'static str {
    STARTER_KB
}

fn check_unique<'a>(kind: &str, ids: impl Iterator<Item = &'a str>) -> Result<(), KbError> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(KbError::Validation(format!("{kind} with empty id")));
        }
        if !seen.insert(id) {
            return Err(KbError::Validation(format!("duplicate {kind} id `{id}`")));
        }
    }
    Ok(())
}

impl KnowledgeBase {
    fn from_document(doc: KbDocument) -> Result<Self, KbError> {
        if doc.version != KB_VERSION {
            return Err(KbError::Version(doc.version));
        }
        check_unique("category", doc.categories.iter().map(|c| c.id.as_str()))?;
        check_unique("concept", doc.concepts.iter().map(|c| c.id.as_str()))?;
        check_unique("question", doc.questions.iter().map(|q| q.id.as_str()))?;

        let mut by_category: HashMap<String, CategoryIndex> = doc
            .categories
            .iter()
            .map(|c| (c.id.clone(), CategoryIndex::default()))
            .collect();

        for (i, c) in doc.concepts.iter().enumerate() {
            let slot = by_category.get_mut(&c.category).ok_or_else(|| {
                KbError::Reference(format!("concept `{}` names unknown category `{}`", c.id, c.category))
            })?;
            slot.concepts.push(i);
            if !(c.prior_weight.is_finite() && c.prior_weight >= 0.0) {
                return Err(KbError::Validation(format!(
                    "concept `{}` has invalid prior_weight {}",
                    c.id, c.prior_weight
                )));
            }
            if c.description.trim().is_empty() {
                return Err(KbError::Validation(format!(
                    "concept `{}` has an empty description",
                    c.id
                )));
            }
            if let Some(k) = c.keywords.iter().find(|k| k.is_empty() || k.to_lowercase() != **k) {
                return Err(KbError::Validation(format!(
                    "concept `{}` keyword `{k}` must be non-empty lowercase",
                    c.id
                )));
            }
        }
        for (i, q) in doc.questions.iter().enumerate() {
            let slot = by_category.get_mut(&q.category).ok_or_else(|| {
                KbError::Reference(format!("question `{}` names unknown category `{}`", q.id, q.category))
            })?;
            slot.questions.push(i);
            if q.options.len() < 2 {
                return Err(KbError::Validation(format!(
                    "question `{}` needs at least two options",
                    q.id
                )));
            }
            check_unique(
                &format!("option of question `{}`", q.id),
                q.options.iter().map(|o| o.id.as_str()),
            )?;
        }
        for cat in &doc.categories {
            let idx = &by_category[&cat.id];
            if idx.concepts.is_empty() || idx.questions.is_empty() {
                return Err(KbError::Validation(format!(
                    "category `{}` needs at least one concept and one question",
                    cat.id
                )));
            }
        }

        let concept_ids: HashMap<String, usize> = doc
            .concepts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        let question_ids: HashMap<String, usize> = doc
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id.clone(), i))
            .collect();

        let mut cells = Vec::with_capacity(doc.cells.len());
        let mut cell_index = HashMap::new();
        for cd in doc.cells {
            let m = *concept_ids
                .get(&cd.concept)
                .ok_or_else(|| KbError::Reference(format!("cell names unknown concept `{}`", cd.concept)))?;
            let n = *question_ids
                .get(&cd.question)
                .ok_or_else(|| KbError::Reference(format!("cell names unknown question `{}`", cd.question)))?;
            let question = &doc.questions[n];
            if doc.concepts[m].category != question.category {
                return Err(KbError::Validation(format!(
                    "cell ({}, {}) spans two categories",
                    cd.concept, cd.question
                )));
            }
            if cd.reference.is_empty() {
                return Err(KbError::Validation(format!(
                    "cell ({}, {}) has an empty reference set",
                    cd.concept, cd.question
                )));
            }
            let mut reference = Vec::with_capacity(cd.reference.len());
            for opt in &cd.reference {
                let l = question.option_index(opt).ok_or_else(|| {
                    KbError::Reference(format!(
                        "cell ({}, {}) references unknown option `{opt}`",
                        cd.concept, cd.question
                    ))
                })?;
                if reference.contains(&l) {
                    return Err(KbError::Validation(format!(
                        "cell ({}, {}) repeats option `{opt}`",
                        cd.concept, cd.question
                    )));
                }
                reference.push(l);
            }
            reference.sort_unstable();
            let mut frequencies = vec![0u64; question.options.len()];
            for (opt, count) in &cd.frequencies {
                let l = question.option_index(opt).ok_or_else(|| {
                    KbError::Reference(format!(
                        "cell ({}, {}) has a frequency for unknown option `{opt}`",
                        cd.concept, cd.question
                    ))
                })?;
                frequencies[l] = *count;
            }
            if cell_index.insert((m, n), cells.len()).is_some() {
                return Err(KbError::Validation(format!(
                    "duplicate cell ({}, {})",
                    cd.concept, cd.question
                )));
            }
            cells.push(MatrixCell {
                concept: m,
                question: n,
                reference,
                frequencies,
            });
        }
        for idx in by_category.values() {
            for &m in &idx.concepts {
                for &n in &idx.questions {
                    if !cell_index.contains_key(&(m, n)) {
                        return Err(KbError::Validation(format!(
                            "missing cell ({}, {})",
                            doc.concepts[m].id, doc.questions[n].id
                        )));
                    }
                }
            }
        }

        Ok(Self {
            categories: doc.categories,
            concepts: doc.concepts,
            questions: doc.questions,
            cells,
            concept_ids,
            question_ids,
            cell_index,
            by_category,
        })
    }

    fn to_document(&self) -> KbDocument {
        let cells = self
            .cells
            .iter()
            .map(|c| {
                let q = &self.questions[c.question];
                CellDoc {
                    concept: self.concepts[c.concept].id.clone(),
                    question: q.id.clone(),
                    reference: c.reference.iter().map(|&l| q.options[l].id.clone()).collect(),
                    frequencies: c
                        .frequencies
                        .iter()
                        .enumerate()
                        .filter(|(_, &f)| f > 0)
                        .map(|(l, &f)| (q.options[l].id.clone(), f))
                        .collect(),
                }
            })
            .collect();
        KbDocument {
            version: KB_VERSION,
            categories: self.categories.clone(),
            concepts: self.concepts.clone(),
            questions: self.questions.clone(),
            cells,
        }
    }

    /// Serializes back into the document format accepted by [`load_kb`].
    pub fn to_document_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("knowledge base serializes")
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn concept(&self, index: usize) -> &Concept {
        &self.concepts[index]
    }

    pub fn question(&self, index: usize) -> &Question {
        &self.questions[index]
    }

    pub fn concept_index(&self, id: &str) -> Result<usize, KbError> {
        self.concept_ids
            .get(id)
            .copied()
            .ok_or_else(|| KbError::Reference(format!("unknown concept `{id}`")))
    }

    pub fn question_index(&self, id: &str) -> Result<usize, KbError> {
        self.question_ids
            .get(id)
            .copied()
            .ok_or_else(|| KbError::Reference(format!("unknown question `{id}`")))
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.by_category.contains_key(category)
    }

    fn category_index(&self, category: &str) -> Result<&CategoryIndex, KbError> {
        self.by_category
            .get(category)
            .ok_or_else(|| KbError::UnknownCategory(category.to_string()))
    }

    /// Global concept indices of a category, in document order. Position in
    /// this slice is the concept's slot in a belief vector.
    pub fn category_concepts(&self, category: &str) -> Result<&[usize], KbError> {
        Ok(&self.category_index(category)?.concepts)
    }

    /// Global question indices of a category, in document order.
    pub fn category_questions(&self, category: &str) -> Result<&[usize], KbError> {
        Ok(&self.category_index(category)?.questions)
    }

    /// Largest option count among a category's questions.
    pub fn max_options(&self, category: &str) -> Result<usize, KbError> {
        Ok(self
            .category_questions(category)?
            .iter()
            .map(|&n| self.questions[n].options.len())
            .max()
            .unwrap_or(0))
    }

    pub fn cell(&self, concept: usize, question: usize) -> Result<&MatrixCell, KbError> {
        self.cell_index
            .get(&(concept, question))
            .map(|&i| &self.cells[i])
            .ok_or_else(|| {
                KbError::Validation(format!(
                    "no cell for ({}, {}); concept and question must share a category",
                    self.concepts.get(concept).map_or("?", |c| c.id.as_str()),
                    self.questions.get(question).map_or("?", |q| q.id.as_str()),
                ))
            })
    }

    pub fn cells(&self) -> &[MatrixCell] {
        &self.cells
    }

    pub fn prior_weights(&self, category: &str) -> Result<Vec<f64>, KbError> {
        Ok(self
            .category_concepts(category)?
            .iter()
            .map(|&m| self.concepts[m].prior_weight)
            .collect())
    }

    /// Every pair of concepts in `category` whose reference answers agree on
    /// every question. An empty result means noiseless answers can always
    /// separate the concepts.
    pub fn validate_identifiability(&self, category: &str) -> Result<Vec<(String, String)>, KbError> {
        let idx = self.category_index(category)?;
        let mut pairs = Vec::new();
        for (i, &a) in idx.concepts.iter().enumerate() {
            for &b in &idx.concepts[i + 1..] {
                let same = idx.questions.iter().all(|&n| {
                    self.cells[self.cell_index[&(a, n)]].reference == self.cells[self.cell_index[&(b, n)]].reference
                });
                if same {
                    pairs.push((self.concepts[a].id.clone(), self.concepts[b].id.clone()));
                }
            }
        }
        Ok(pairs)
    }

    /// Increments the historical count for one (concept, question, option).
    pub fn record_answer_frequency(&mut self, concept: &str, question: &str, option: &str) -> Result<(), KbError> {
        let m = self.concept_index(concept)?;
        let n = self.question_index(question)?;
        let l = self.questions[n]
            .option_index(option)
            .ok_or_else(|| KbError::Reference(format!("unknown option `{option}` for question `{question}`")))?;
        let cell = *self
            .cell_index
            .get(&(m, n))
            .ok_or_else(|| KbError::Reference(format!("`{concept}` and `{question}` are in different categories")))?;
        self.cells[cell].frequencies[l] += 1;
        Ok(())
    }

    pub fn total_frequency(&self) -> u64 {
        self.cells.iter().flat_map(|c| c.frequencies.iter()).sum()
    }
}
