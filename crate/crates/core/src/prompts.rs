//! Task prompts used to answer questions, with and without retrieved documents.
//!
//! The no-retrieval variant of each prompt drops the document block and the
//! evidence wording. Retrieved documents go into the system message after
//! [`DOCUMENTS_MARKER`], formatted as `Doc <i>(Title: <title>) <text>` and
//! separated by blank lines; the question goes into the user message.

use crate::backends::GenerationRequest;
use crate::corpus::Document;

pub const DOCUMENTS_MARKER: &str = "The following are given documents.\n\n";
pub const QUESTION_PREFIX: &str = "Question: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskPrompt {
    pub with_retrieval: &'static str,
    pub without_retrieval: &'static str,
}

const FACTOID: TaskPrompt = TaskPrompt {
    with_retrieval: "Answer the factoid question using the provided evidence. Output only the short final answer phrase or entity name. Do not output a sentence or explanation.",
    without_retrieval: "Answer the factoid question from your own knowledge. Output only the short final answer phrase or entity name. Do not output a sentence or explanation.",
};

const BOOLQ: TaskPrompt = TaskPrompt {
    with_retrieval: "Decide whether the answer to the question is true or false using the provided evidence. Output exactly one word: True or False. Do not output yes or no, labels, or any explanation.",
    without_retrieval: "Decide whether the answer to the question is true or false from your own knowledge. Output exactly one word: True or False. Do not output yes or no, labels, or any explanation.",
};

const HOTPOTQA: TaskPrompt = TaskPrompt {
    with_retrieval: "Answer the multi-hop question using the provided evidence. Output only the final answer. If the question is yes or no, output exactly yes or no in lowercase. Otherwise output only the shortest answer phrase.",
    without_retrieval: "Answer the multi-hop question from your own knowledge. Output only the final answer. If the question is yes or no, output exactly yes or no in lowercase. Otherwise output only the shortest answer phrase.",
};

const FEVER: TaskPrompt = TaskPrompt {
    with_retrieval: "Verify the claim using the provided evidence. Output exactly one label: SUPPORTS, REFUTES, or NOT ENOUGH INFO. Do not output any explanation.",
    without_retrieval: "Verify the claim from your own knowledge. Output exactly one label: SUPPORTS, REFUTES, or NOT ENOUGH INFO. Do not output any explanation.",
};

const SQUAD: TaskPrompt = TaskPrompt {
    with_retrieval: "Answer the question with a short span copied from the provided evidence. Output only the answer span. Do not output a sentence or explanation.",
    without_retrieval: "Answer the question from your own knowledge with a short phrase. Output only the answer phrase. Do not output a sentence or explanation.",
};

/// Prompt pair for a dataset name; unknown and custom datasets use the
/// factoid prompt.
pub fn task_prompt_for(dataset: &str) -> TaskPrompt {
    match dataset.trim().to_ascii_lowercase().as_str() {
        "boolq" => BOOLQ,
        "hotpotqa" => HOTPOTQA,
        "fever" => FEVER,
        "squad" => SQUAD,
        _ => FACTOID,
    }
}

/// `Doc <i>(Title: <title>) <text>` blocks, numbered from 1, blank-line separated.
pub fn format_reference(docs: &[&Document]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("Doc {}(Title: {}) {}", i + 1, d.title, d.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

impl TaskPrompt {
    /// Builds an answering request. `docs = None` is the no-retrieval prompt.
    pub fn request(
        &self,
        question: &str,
        docs: Option<&[&Document]>,
        max_new_tokens: usize,
        temperature: f64,
    ) -> GenerationRequest {
        let system = match docs {
            None => self.without_retrieval.to_string(),
            Some(docs) => format!(
                "{}\n{}{}",
                self.with_retrieval,
                DOCUMENTS_MARKER,
                format_reference(docs)
            ),
        };
        GenerationRequest {
            system,
            user: format!("{QUESTION_PREFIX}{question}\nAnswer:"),
            max_new_tokens,
            temperature,
        }
    }
}

/// Question embedded in a task prompt's user message.
pub fn extract_question(user: &str) -> Option<&str> {
    user.lines()
        .find_map(|l| l.strip_prefix(QUESTION_PREFIX))
        .map(str::trim)
}

/// Document block of a task prompt's system message; `None` for
/// no-retrieval prompts.
pub fn extract_documents(system: &str) -> Option<&str> {
    system.find(DOCUMENTS_MARKER).map(|i| &system[i + DOCUMENTS_MARKER.len()..])
}
