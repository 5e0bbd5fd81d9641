//! Token vocabulary, prompt layout and generation parsing.
//!
//! The vocabulary is closed: digits, arithmetic symbols, a fixed word list
//! and a handful of structural tokens cover everything the task and teacher
//! generators can emit, so encoding never fails on generator output. The
//! budget is injected into the prompt as plain decimal digits between
//! `<budget>` markers, and the think-segment length `L` of a generation is
//! the number of tokens strictly between `<think>` and `</think>`.

use crate::error::{CoreError, Result};
use crate::taskgen::{StepKind, Task, TeacherTrace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

pub type TokenId = u32;

const STRUCTURAL: [&str; 9] = [
    "<pad>", "<bos>", "<eos>", "<think>", "</think>", "<answer>", "</answer>", "<budget>",
    "</budget>",
];

const STEP_TAGS: [&str; 5] = ["<decompose>", "<derive>", "<verify>", "<explore>", "<restate>"];

const SYMBOLS: [&str; 11] = ["+", "-", "*", "/", "=", ".", ",", ":", "?", "(", ")"];

/// Closed word list. Includes every word the generators emit plus common
/// filler so the list lands near 200 entries.
const WORDS: [&str; 200] = [
    "a", "able", "about", "above", "across", "add", "after", "again", "against", "all", "almost",
    "along", "already", "also", "among", "amount", "an", "and", "another", "answer", "any",
    "apply", "are", "area", "around", "as", "ask", "at", "away", "back", "base", "be", "because",
    "become", "been", "before", "begin", "behind", "being", "below", "best", "better", "between",
    "big", "both", "bring", "but", "by", "call", "can", "care", "carry", "case", "cause",
    "certain", "chain", "change", "check", "clear", "close", "come", "common", "complete",
    "consistent", "contain", "correct", "could", "count", "course", "cover", "current", "day",
    "decide", "deep", "describe", "detail", "different", "divide", "do", "does", "done", "down",
    "during", "each", "early", "easy", "effect", "either", "else", "end", "enough", "equal",
    "even", "ever", "every", "exact", "example", "expect", "explore", "fact", "far", "fast",
    "few", "final", "find", "fine", "first", "fit", "fix", "follow", "for", "form", "forward",
    "from", "front", "full", "further", "general", "get", "give", "given", "go", "good", "great",
    "group", "grouping", "grow", "half", "hand", "happen", "hard", "has", "have", "head", "help",
    "here", "high", "hold", "holds", "how", "if", "in", "include", "indeed", "inside", "into",
    "is", "it", "its", "just", "keep", "kept", "kind", "know", "large", "last", "late", "later",
    "lead", "learn", "least", "leave", "left", "less", "let", "level", "like", "line", "list",
    "listed", "little", "long", "look", "looks", "low", "main", "make", "many", "might",
    "multiply", "one", "operations", "order", "other", "plan", "reorder", "result", "shorten", "so",
    "start", "steps", "still", "subtract", "the", "then", "value", "we", "what", "with", "yet",
];

/// Immutable token vocabulary with a bijective token-to-id map.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    pad: TokenId,
    bos: TokenId,
    eos: TokenId,
    think_open: TokenId,
    think_close: TokenId,
    answer_open: TokenId,
    answer_close: TokenId,
    budget_open: TokenId,
    budget_close: TokenId,
    digits: [TokenId; 10],
    step_tags: [TokenId; 5],
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// The lab's fixed vocabulary: structural tokens, step tags, digits,
    /// symbols, then the word list, with ids contiguous from 0 and `<pad>`
    /// at id 0.
    pub fn new() -> Self {
        let mut tokens: Vec<String> = Vec::new();
        tokens.extend(STRUCTURAL.iter().map(|s| s.to_string()));
        tokens.extend(STEP_TAGS.iter().map(|s| s.to_string()));
        for d in 0..10u8 {
            tokens.push(((b'0' + d) as char).to_string());
        }
        tokens.extend(SYMBOLS.iter().map(|s| s.to_string()));
        tokens.extend(WORDS.iter().map(|s| s.to_string()));
        Self::from_token_list(tokens).expect("built-in vocabulary is valid")
    }

    /// Rebuild a vocabulary from a persisted token list (id order).
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if ids.insert(tok.clone(), i as TokenId).is_some() {
                return Err(CoreError::invalid(format!("duplicate token: {tok}")));
            }
        }
        let lookup = |name: &str| -> Result<TokenId> {
            ids.get(name)
                .copied()
                .ok_or_else(|| CoreError::invalid(format!("vocabulary missing token {name}")))
        };
        let pad = lookup("<pad>")?;
        if pad != 0 {
            return Err(CoreError::invalid("<pad> must have id 0"));
        }
        let mut digits = [0; 10];
        for (d, slot) in digits.iter_mut().enumerate() {
            *slot = lookup(&d.to_string())?;
        }
        let mut step_tags = [0; 5];
        for (i, tag) in STEP_TAGS.iter().enumerate() {
            step_tags[i] = lookup(tag)?;
        }
        Ok(Vocab {
            pad,
            bos: lookup("<bos>")?,
            eos: lookup("<eos>")?,
            think_open: lookup("<think>")?,
            think_close: lookup("</think>")?,
            answer_open: lookup("<answer>")?,
            answer_close: lookup("</answer>")?,
            budget_open: lookup("<budget>")?,
            budget_close: lookup("</budget>")?,
            digits,
            step_tags,
            tokens,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token_list(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }
    pub fn bos(&self) -> TokenId {
        self.bos
    }
    pub fn eos(&self) -> TokenId {
        self.eos
    }
    pub fn think_open(&self) -> TokenId {
        self.think_open
    }
    pub fn think_close(&self) -> TokenId {
        self.think_close
    }
    pub fn answer_open(&self) -> TokenId {
        self.answer_open
    }
    pub fn answer_close(&self) -> TokenId {
        self.answer_close
    }
    pub fn budget_open(&self) -> TokenId {
        self.budget_open
    }
    pub fn budget_close(&self) -> TokenId {
        self.budget_close
    }

    pub fn step_tag(&self, kind: StepKind) -> TokenId {
        let idx = StepKind::ALL.iter().position(|k| *k == kind).unwrap();
        self.step_tags[idx]
    }

    /// The step kind a tag token stands for, if the token is a tag.
    pub fn tag_kind(&self, id: TokenId) -> Option<StepKind> {
        self.step_tags
            .iter()
            .position(|t| *t == id)
            .map(|i| StepKind::ALL[i])
    }

    /// Stable content hash of the vocabulary, recorded in checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.tokens).expect("token list serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn is_gluing(&self, id: TokenId) -> bool {
        let tok = self.token(id);
        tok.len() == 1 && matches!(tok.as_bytes()[0], b'0'..=b'9' | b'+' | b'-' | b'*' | b'/' | b'=')
    }

    /// Encode a whitespace-separated text string. Each chunk is either a
    /// known token or a run of digits and arithmetic symbols (numbers and
    /// equations), which splits into per-character tokens.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            if let Some(id) = self.id(chunk) {
                out.push(id);
                continue;
            }
            for ch in chunk.chars() {
                let id = self.id(&ch.to_string()).ok_or_else(|| {
                    CoreError::invalid(format!("token not in vocabulary: {ch:?} in {chunk:?}"))
                })?;
                if !self.is_gluing(id) {
                    return Err(CoreError::invalid(format!(
                        "unsplittable chunk not in vocabulary: {chunk:?}"
                    )));
                }
                out.push(id);
            }
        }
        Ok(out)
    }

    /// Inverse of `tokenize` on generator-emitted strings: tokens are
    /// space-separated except that adjacent digit/operator tokens glue into
    /// one chunk (numbers and equations).
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev_glue = false;
        for (i, &id) in tokens.iter().enumerate() {
            let glue = self.is_gluing(id);
            if i > 0 && !(prev_glue && glue) {
                out.push(' ');
            }
            out.push_str(self.token(id));
            prev_glue = glue;
        }
        out
    }

    fn push_decimal(&self, value: u32, out: &mut Vec<TokenId>) {
        for ch in value.to_string().bytes() {
            out.push(self.digits[(ch - b'0') as usize]);
        }
    }

    /// Prompt layout: `<bos> <budget> digits </budget> question <think>`.
    pub fn encode_prompt(&self, task: &Task, budget: u32) -> Vec<TokenId> {
        let mut out = vec![self.bos, self.budget_open];
        self.push_decimal(budget, &mut out);
        out.push(self.budget_close);
        out.extend(self.tokenize(&task.question_text).expect("closed vocabulary"));
        out.push(self.think_open);
        out
    }

    /// Prompt without a budget clause, for unconstrained training and the
    /// unconstrained evaluation column.
    pub fn encode_prompt_unbudgeted(&self, task: &Task) -> Vec<TokenId> {
        let mut out = vec![self.bos];
        out.extend(self.tokenize(&task.question_text).expect("closed vocabulary"));
        out.push(self.think_open);
        out
    }

    /// Recover `(budget, question_text)` from an encoded prompt.
    pub fn decode_prompt(&self, tokens: &[TokenId]) -> Result<(Option<u32>, String)> {
        let mut rest = tokens
            .strip_prefix(&[self.bos][..])
            .ok_or_else(|| CoreError::invalid("prompt must start with <bos>"))?;
        let mut budget = None;
        if rest.first() == Some(&self.budget_open) {
            let close = rest
                .iter()
                .position(|&t| t == self.budget_close)
                .ok_or_else(|| CoreError::invalid("unterminated budget clause"))?;
            let digits: String = rest[1..close].iter().map(|&t| self.token(t)).collect();
            let value: u32 = digits
                .parse()
                .map_err(|_| CoreError::invalid(format!("bad budget digits: {digits:?}")))?;
            budget = Some(value);
            rest = &rest[close + 1..];
        }
        let question = rest
            .strip_suffix(&[self.think_open][..])
            .ok_or_else(|| CoreError::invalid("prompt must end with <think>"))?;
        Ok((budget, self.detokenize(question)))
    }

    /// Think-segment encoding of typed steps: each step contributes its tag
    /// token followed by its text tokens. This is the unit `L` is counted in.
    pub fn encode_steps(&self, steps: &[(StepKind, String)]) -> Vec<TokenId> {
        let mut out = Vec::new();
        for (kind, text) in steps {
            out.push(self.step_tag(*kind));
            out.extend(self.tokenize(text).expect("closed vocabulary"));
        }
        out
    }

    pub fn encode_trace(&self, trace: &TeacherTrace) -> Vec<TokenId> {
        self.encode_steps(&trace.steps)
    }

    /// Inverse of `encode_steps` for well-formed think segments (every step
    /// opens with its tag token). Model generations are not guaranteed to be
    /// well formed; this is for dataset records.
    pub fn decode_steps(&self, tokens: &[TokenId]) -> Result<Vec<(StepKind, String)>> {
        let mut out: Vec<(StepKind, Vec<TokenId>)> = Vec::new();
        for &id in tokens {
            if let Some(kind) = self.tag_kind(id) {
                out.push((kind, Vec::new()));
            } else {
                match out.last_mut() {
                    Some((_, text)) => text.push(id),
                    None => {
                        return Err(CoreError::invalid(
                            "think segment does not start with a step tag",
                        ))
                    }
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|(kind, text)| (kind, self.detokenize(&text)))
            .collect())
    }

    /// Answer segment: `<answer> digits </answer>`.
    pub fn encode_answer(&self, answer: &str) -> Vec<TokenId> {
        let mut out = vec![self.answer_open];
        out.extend(self.tokenize(answer).expect("closed vocabulary"));
        out.push(self.answer_close);
        out
    }

    /// Parse a model continuation (the tokens after `<think>`).
    pub fn parse_generation(&self, tokens: &[TokenId]) -> ParsedGeneration {
        let Some(close) = tokens.iter().position(|&t| t == self.think_close) else {
            // Truncated before the think segment ended.
            return ParsedGeneration {
                think_tokens: tokens.to_vec(),
                answer_text: String::new(),
                think_len: tokens.len(),
                malformed: true,
            };
        };
        let think_tokens = tokens[..close].to_vec();
        let rest = &tokens[close + 1..];
        let parsed_answer = rest
            .iter()
            .position(|&t| t == self.answer_open)
            .and_then(|open| {
                rest[open + 1..]
                    .iter()
                    .position(|&t| t == self.answer_close)
                    .map(|len| self.detokenize(&rest[open + 1..open + 1 + len]))
            });
        let malformed = parsed_answer.is_none();
        ParsedGeneration {
            think_len: think_tokens.len(),
            think_tokens,
            answer_text: parsed_answer.unwrap_or_default(),
            malformed,
        }
    }
}

/// The structural decomposition of a model continuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedGeneration {
    pub think_tokens: Vec<TokenId>,
    pub answer_text: String,
    /// Tokens strictly between `<think>` and `</think>`; the length measure
    /// used by budget rewards and fidelity.
    pub think_len: usize,
    pub malformed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{generate_task, teacher_trace, Verbosity};

    #[test]
    fn vocabulary_is_bijective_and_contiguous() {
        let v = Vocab::new();
        assert_eq!(v.pad(), 0);
        assert!((190..=240).contains(&v.len()), "vocab size {}", v.len());
        for id in 0..v.len() as TokenId {
            assert_eq!(v.id(v.token(id)), Some(id));
        }
    }

    #[test]
    fn vocabulary_is_closed_over_generator_output() {
        let v = Vocab::new();
        for seed in 0..200 {
            let task = generate_task(seed, 1 + (seed % 5) as u32).unwrap();
            v.tokenize(&task.question_text).unwrap();
            for verbosity in [Verbosity::Low, Verbosity::High] {
                let trace = teacher_trace(&task, verbosity);
                for (_, text) in &trace.steps {
                    v.tokenize(text).unwrap();
                }
                v.encode_trace(&trace);
                v.encode_answer(&trace.answer);
            }
        }
    }

    #[test]
    fn round_trip_on_generator_strings() {
        let v = Vocab::new();
        for seed in 0..100 {
            let task = generate_task(seed, 1 + (seed % 4) as u32).unwrap();
            let toks = v.tokenize(&task.question_text).unwrap();
            assert_eq!(v.detokenize(&toks), task.question_text);
            let trace = teacher_trace(&task, Verbosity::High);
            for (_, text) in &trace.steps {
                let toks = v.tokenize(text).unwrap();
                assert_eq!(&v.detokenize(&toks), text);
            }
        }
    }

    #[test]
    fn prompt_budget_zero_and_round_trip() {
        let v = Vocab::new();
        let task = generate_task(3, 2).unwrap();
        let prompt = v.encode_prompt(&task, 0);
        assert_eq!(prompt[0], v.bos());
        assert_eq!(prompt[1], v.budget_open());
        assert_eq!(v.token(prompt[2]), "0");
        assert_eq!(prompt[3], v.budget_close());
        let (budget, question) = v.decode_prompt(&prompt).unwrap();
        assert_eq!(budget, Some(0));
        assert_eq!(question, task.question_text);

        let prompt = v.encode_prompt(&task, 1500);
        let (budget, _) = v.decode_prompt(&prompt).unwrap();
        assert_eq!(budget, Some(1500));
    }

    #[test]
    fn prompts_differ_only_in_question_segment() {
        let v = Vocab::new();
        for pair in 0..20u64 {
            let a = generate_task(1000 + pair, 3).unwrap();
            let b = generate_task(2000 + pair, 3).unwrap();
            let pa = v.encode_prompt(&a, 64);
            let pb = v.encode_prompt(&b, 64);
            // Shared head: <bos> <budget> 6 4 </budget>
            let head = 5;
            assert_eq!(pa[..head], pb[..head]);
            assert_eq!(pa.last(), pb.last());
            let qa = &pa[head..pa.len() - 1];
            let qb = &pb[head..pb.len() - 1];
            assert_eq!(v.detokenize(qa), a.question_text);
            assert_eq!(v.detokenize(qb), b.question_text);
        }
    }

    #[test]
    fn parse_generation_cases() {
        let v = Vocab::new();
        let x = v.id("value").unwrap();
        let y = v.id("check").unwrap();
        let d4 = v.id("4").unwrap();
        let d2 = v.id("2").unwrap();

        let ok = vec![x, y, v.think_close(), v.answer_open(), d4, d2, v.answer_close()];
        let parsed = v.parse_generation(&ok);
        assert_eq!(parsed.think_len, 2);
        assert_eq!(parsed.answer_text, "42");
        assert!(!parsed.malformed);

        let truncated = vec![x, y, x];
        let parsed = v.parse_generation(&truncated);
        assert_eq!(parsed.think_len, 3);
        assert!(parsed.malformed);
        assert_eq!(parsed.answer_text, "");

        let empty_think = vec![v.think_close(), v.answer_open(), d4, v.answer_close()];
        let parsed = v.parse_generation(&empty_think);
        assert_eq!(parsed.think_len, 0);
        assert!(!parsed.malformed);
        assert_eq!(parsed.answer_text, "4");

        let missing_answer_close = vec![x, v.think_close(), v.answer_open(), d4];
        let parsed = v.parse_generation(&missing_answer_close);
        assert!(parsed.malformed);
        assert_eq!(parsed.answer_text, "");
    }

    #[test]
    fn think_len_matches_trace_token_count() {
        let v = Vocab::new();
        for seed in 0..50 {
            let task = generate_task(seed, 2).unwrap();
            let trace = teacher_trace(&task, Verbosity::High);
            let think = v.encode_trace(&trace);
            let mut full = think.clone();
            full.push(v.think_close());
            full.extend(v.encode_answer(&trace.answer));
            let parsed = v.parse_generation(&full);
            assert_eq!(parsed.think_len, think.len());
            assert!(!parsed.malformed);
            assert_eq!(parsed.answer_text, trace.answer);
        }
    }

    #[test]
    fn persisted_token_list_round_trips() {
        let v = Vocab::new();
        let json = serde_json::to_string(v.token_list()).unwrap();
        let tokens: Vec<String> = serde_json::from_str(&json).unwrap();
        let rebuilt = Vocab::from_token_list(tokens).unwrap();
        assert_eq!(rebuilt.token_list(), v.token_list());
        assert_eq!(rebuilt.hash(), v.hash());
    }
}
