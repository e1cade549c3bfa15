//! Chat-completion port: prompt templates, clients (HTTP and fixture mock),
//! refusal detection and an on-disk response cache.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub refused: bool,
}

// ---------------------------------------------------------------- prompts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTask {
    AngerTransformation,
    Rephrasing,
    GiveVerdict,
    JudgeWithComment,
}

pub const JUDGE_SYSTEM_PROMPT: &str = "You are a moral arbiter hired by r/AmITheAsshole. \
When presented with a story, you respond objectively with your verdict. \
As is customary in that subreddit, you always begin your response with one of [NTA, YTA, ESH, NAH].";

pub const JUDGE_QUESTION: &str = "What do you say? Is the verdict NTA, YTA, ESH, or NAH? No explanations.";

const ANGER_TEMPLATE: &str = "Here is a Reddit post: {post}. Rephrase it while maintaining the semantics, \
writing style, structures and paragraphs, but express much more anger. The output length should be 10 words \
more or less than the original post. Please only output the rephrased texts:";

const REPHRASE_TEMPLATE: &str = "Here is a Reddit post: {post} Rephrase it while maintaining the semantics, \
writing style, structures and paragraphs. The output length should be 10 words more or less than the original \
post. Please only output the rephrased texts:";

const VERDICT_TEMPLATE: &str = "Given a Reddit post from r/AmItheAsshole, classify it into one of the following \
four categories: YTA (You're the asshole): The submitter is deemed to be in the wrong; \
NTA (Not the asshole): The other party is considered to be wrong; \
ESH (Everyone sucks here): Both parties are wrong; \
NAH (No asshole): Both parties acted appropriately, but the situation just sucks. \
Your task is to analyze the post and determine which category it belongs to based on the narrative provided \
by the submitter. Consider the actions, intentions, and attitudes of all involved parties to make an accurate \
classification. Only output one of these labels: YTA, NTA, ESH, or NAH. No explanation is needed. \
Limit your response to 3 characters:\n\n{post}";

impl PromptTask {
    pub fn name(self) -> &'static str {
        match self {
            PromptTask::AngerTransformation => "anger_transformation",
            PromptTask::Rephrasing => "rephrasing",
            PromptTask::GiveVerdict => "give_verdict",
            PromptTask::JudgeWithComment => "judge_with_comment",
        }
    }

    /// The user-facing template; `{post}` and `{comment}` are placeholders.
    pub fn template(self) -> &'static str {
        match self {
            PromptTask::AngerTransformation => ANGER_TEMPLATE,
            PromptTask::Rephrasing => REPHRASE_TEMPLATE,
            PromptTask::GiveVerdict => VERDICT_TEMPLATE,
            PromptTask::JudgeWithComment => "The author said--\n{post}\n\nThe community said--\n{comment}",
        }
    }

    pub fn default_max_tokens(self) -> u32 {
        match self {
            PromptTask::JudgeWithComment => 2,
            _ => 1000,
        }
    }

    pub fn takes_comment(self) -> bool {
        self == PromptTask::JudgeWithComment
    }
}

/// Instantiates a task's messages. Single-pass substitution, so braces
/// inside the post are left alone.
pub fn build_prompt(task: PromptTask, post: &str, comment: Option<&str>) -> Result<Vec<Message>> {
    match (task.takes_comment(), comment) {
        (true, None) => return Err(Error::MissingPlaceholderInput("comment")),
        (false, Some(_)) => return Err(Error::UnexpectedComment(task.name())),
        _ => {}
    }
    Ok(match task {
        PromptTask::JudgeWithComment => vec![
            Message::system(JUDGE_SYSTEM_PROMPT),
            Message::user(format!("The author said--\n{post}")),
            Message::user(format!("The community said--\n{}", comment.unwrap_or_default())),
            Message::user(JUDGE_QUESTION),
        ],
        _ => {
            let (head, tail) = task
                .template()
                .split_once("{post}")
                .expect("template has a post placeholder");
            vec![Message::user(format!("{head}{post}{tail}"))]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSettings {
    pub model_id: String,
    pub temperature: f64,
    /// Overrides the task default when set.
    pub max_tokens: Option<u32>,
    /// Requests in flight at once.
    pub parallelism: usize,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            model_id: "mock".into(),
            temperature: 1.0,
            max_tokens: None,
            parallelism: 4,
            retries: 3,
            backoff_ms: 250,
        }
    }
}

pub fn build_request(
    settings: &LlmSettings,
    task: PromptTask,
    post: &str,
    comment: Option<&str>,
) -> Result<LlmRequest> {
    Ok(LlmRequest {
        model_id: settings.model_id.clone(),
        temperature: settings.temperature,
        max_tokens: settings.max_tokens.unwrap_or(task.default_max_tokens()),
        messages: build_prompt(task, post, comment)?,
    })
}

// ---------------------------------------------------------------- refusals

pub const DEFAULT_REFUSAL_PHRASES: &[&str] = &[
    "i can't assist",
    "i cannot assist",
    "i can't help",
    "i cannot help",
    "i'm not able to",
    "i am not able to",
    "i won't be able to",
    "i'm sorry, but",
    "i apologize, but",
    "as an ai",
    "i must decline",
    "i can't comply",
    "i cannot comply",
];

/// True when the response is blank or contains a refusal phrase
/// (case-insensitive, typographic apostrophes normalized).
pub fn detect_refusal_with(response: &str, phrases: &[impl AsRef<str>]) -> bool {
    let text = response.trim().to_lowercase().replace('\u{2019}', "'");
    text.is_empty() || phrases.iter().any(|p| text.contains(&p.as_ref().to_lowercase()))
}

pub fn detect_refusal(response: &str) -> bool {
    detect_refusal_with(response, DEFAULT_REFUSAL_PHRASES)
}

// ---------------------------------------------------------------- clients

pub trait LlmClient: Send + Sync {
    /// One attempt. Transport problems surface as [`Error::Transport`].
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse>;
}

/// Reply rule of the mock client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockReply {
    /// Literal reply; `{input}` expands to the extracted input.
    #[serde(default)]
    pub text: Option<String>,
    /// Picks one entry by a hash of the request.
    #[serde(default)]
    pub choices: Option<Vec<String>>,
    /// Input is the text of the last user message between these markers
    /// (whole message when absent or not found).
    #[serde(default)]
    pub extract: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Matches when the concatenated message contents contain this string.
    pub contains: String,
    pub reply: MockReply,
}

/// Fixture map for the deterministic mock client.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockFixture {
    /// Exact replies keyed by [`request_hash`].
    pub responses: HashMap<String, String>,
    /// First matching rule wins.
    pub rules: Vec<MockRule>,
    /// Used when nothing else matches; echoes the last user message if unset.
    pub default: Option<MockReply>,
}

/// Deterministic client answering from a [`MockFixture`]; never touches
/// the network. Counts calls so tests can assert cache behavior.
#[derive(Debug, Default)]
pub struct MockClient {
    fixture: MockFixture,
    calls: AtomicUsize,
}

impl MockClient {
    pub fn new(fixture: MockFixture) -> Self {
        MockClient {
            fixture,
            calls: AtomicUsize::new(0),
        }
    }

    /// Replies `text` to everything.
    pub fn constant(text: impl Into<String>) -> Self {
        Self::new(MockFixture {
            default: Some(MockReply {
                text: Some(text.into()),
                choices: None,
                extract: None,
            }),
            ..MockFixture::default()
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(serde_json::from_str(&s)?))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn render(reply: &MockReply, request: &LlmRequest, hash: &str) -> String {
        if let Some(choices) = reply.choices.as_ref().filter(|c| !c.is_empty()) {
            let k = u64::from_str_radix(&hash[..15], 16).unwrap_or(0) as usize % choices.len();
            return choices[k].clone();
        }
        let last = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        let input = match &reply.extract {
            Some((start, end)) => extract_between(last, start, end).unwrap_or(last),
            None => last,
        };
        match &reply.text {
            Some(t) => t.replace("{input}", input),
            None => input.to_string(),
        }
    }
}

fn extract_between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let to = from + s[from..].rfind(end)?;
    Some(&s[from..to])
}

impl LlmClient for MockClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = request_hash(request);
        let text = if let Some(t) = self.fixture.responses.get(&hash) {
            t.clone()
        } else {
            let joined: String = request.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
            let reply = self
                .fixture
                .rules
                .iter()
                .find(|r| joined.contains(&r.contains))
                .map(|r| &r.reply)
                .or(self.fixture.default.as_ref());
            match reply {
                Some(r) => Self::render(r, request, &hash),
                None => Self::render(
                    &MockReply {
                        text: None,
                        choices: None,
                        extract: None,
                    },
                    request,
                    &hash,
                ),
            }
        };
        Ok(LlmResponse {
            refused: detect_refusal(&text),
            text,
        })
    }
}

pub const API_KEY_ENV: &str = "CAUSALDANN_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "CAUSALDANN_LLM_BASE_URL";

/// OpenAI-compatible `/chat/completions` adapter. The key comes from
/// `CAUSALDANN_LLM_API_KEY`; the base URL may be overridden with
/// `CAUSALDANN_LLM_BASE_URL`.
#[cfg(feature = "http")]
pub struct HttpClient {
    base_url: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

#[cfg(feature = "http")]
impl HttpClient {
    pub fn from_env() -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| Error::Transport {
            attempts: 0,
            message: format!("{API_KEY_ENV} is not set"),
        })?;
        let base_url = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        Self::new(base_url, api_key)
    }

    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            http,
        })
    }
}

#[cfg(feature = "http")]
impl LlmClient for HttpClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let transport = |message: String| Error::Transport { attempts: 1, message };
        let body = serde_json::json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": request.messages,
        });
        let resp = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| transport(e.to_string()))?;
        let status = resp.status();
        let value: serde_json::Value = resp.json().map_err(|e| transport(e.to_string()))?;
        if !status.is_success() {
            return Err(transport(format!("HTTP {status}: {value}")));
        }
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        Ok(LlmResponse {
            refused: detect_refusal(&text),
            text,
        })
    }
}

// ---------------------------------------------------------------- cache

/// Hex SHA-256 over the canonical JSON of model id, temperature, token
/// limit and messages.
pub fn request_hash(request: &LlmRequest) -> String {
    let canonical = serde_json::to_vec(request).expect("request serializes");
    hex::encode(Sha256::digest(canonical))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn from_settings(s: &LlmSettings) -> Self {
        RetryPolicy {
            attempts: s.retries.max(1),
            base_delay: Duration::from_millis(s.backoff_ms),
        }
    }
}

/// Calls the client, retrying transport failures with doubling delays.
pub fn call_with_retry(client: &dyn LlmClient, request: &LlmRequest, policy: RetryPolicy) -> Result<LlmResponse> {
    let mut last = String::new();
    for attempt in 0..policy.attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(policy.base_delay * 2u32.saturating_pow(attempt - 1));
        }
        match client.complete(request) {
            Ok(r) => return Ok(r),
            Err(Error::Transport { message, .. }) => {
                log::warn!("LLM call attempt {} failed: {message}", attempt + 1);
                last = message;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Transport {
        attempts: policy.attempts.max(1),
        message: last,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    request: LlmRequest,
    response: LlmResponse,
}

/// One JSON file per request hash. Writers go through a temp file and a
/// rename, and callers in one process serialize per key, so equal
/// concurrent requests produce one client call.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache {
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    fn key_lock(&self, hash: &str) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().expect("cache lock map poisoned");
        map.entry(hash.to_string()).or_default().clone()
    }

    fn read(&self, path: &Path) -> Option<LlmResponse> {
        let bytes = fs::read(path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) => Some(e.response),
            Err(err) => {
                log::warn!("ignoring unreadable cache file {}: {err}", path.display());
                None
            }
        }
    }

    fn write(&self, path: &Path, entry: &CacheEntry) -> Result<()> {
        let tmp = path.with_extension(format!("tmp.{}.{:?}", std::process::id(), std::thread::current().id()));
        let bytes = serde_json::to_vec_pretty(entry)?;
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

/// Cache-through call: returns the stored response when present, else asks
/// the client (with retries) and stores the answer.
pub fn cached_call(
    client: &dyn LlmClient,
    request: &LlmRequest,
    cache: Option<&ResponseCache>,
    policy: RetryPolicy,
) -> Result<LlmResponse> {
    let Some(cache) = cache else {
        return call_with_retry(client, request, policy);
    };
    let hash = request_hash(request);
    let path = cache.path_for(&hash);
    let lock = cache.key_lock(&hash);
    let _guard = lock.lock().expect("cache key lock poisoned");
    if let Some(r) = cache.read(&path) {
        return Ok(r);
    }
    let response = call_with_retry(client, request, policy)?;
    cache.write(
        &path,
        &CacheEntry {
            request: request.clone(),
            response: response.clone(),
        },
    )?;
    Ok(response)
}

/// Maps `f` over `items` with at most `parallelism` calls in flight,
/// keeping input order in the output.
pub fn run_bounded<T, R, E>(items: &[T], parallelism: usize, f: impl Fn(&T) -> Result<R, E> + Sync + Send) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(&f).collect())
}
