//! Chat-completion client with a content-addressed on-disk cache.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{Paraphraser, VariantSpec};
use crate::error::{GlimError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Wrapper around the instruction; `{instruction}`, `{text}` and `{n}`
    /// are substituted.
    pub prompt_template: String,
    pub timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key: None,
            prompt_template: "{instruction}\nWrite {n} different versions, one per line, without numbering.\nSentence: {text}".into(),
            timeout_secs: 60,
            cache_dir: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    instruction: String,
    text: String,
    variants: Vec<String>,
}

pub struct HttpParaphraser {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

impl HttpParaphraser {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        HttpParaphraser { cfg, agent }
    }

    pub fn cache_key(text: &str, instruction: &str, model: &str) -> String {
        let mut h = Sha256::new();
        for part in [text, instruction, model] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cfg.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn request(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
        });
        log::info!("POST {} ({} prompt bytes)", self.cfg.endpoint, prompt.len());
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| GlimError::Http(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| GlimError::Http(e.to_string()))?;
        log::debug!("response: {value}");
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GlimError::Http("response has no choices[0].message.content".into()))
    }
}

fn split_answer(answer: &str, n: usize) -> Vec<String> {
    answer
        .lines()
        .map(|l| l.trim().trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*')))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .take(n)
        .map(str::to_string)
        .collect()
}

impl Paraphraser for HttpParaphraser {
    fn paraphrase(&self, text: &str, spec: &VariantSpec, instruction: &str, _seed: u64) -> Result<Vec<String>> {
        let key = Self::cache_key(text, instruction, &self.cfg.model);
        let path = self.cache_path(&key);
        if let Some(p) = &path {
            if let Ok(bytes) = fs::read(p) {
                if let Ok(entry) = serde_json::from_slice::<CacheEntry>(&bytes) {
                    return Ok(entry.variants);
                }
            }
        }
        let prompt = self
            .cfg
            .prompt_template
            .replace("{instruction}", instruction)
            .replace("{text}", text)
            .replace("{n}", &spec.count().to_string());
        let variants = split_answer(&self.request(&prompt)?, spec.count());
        if variants.len() != spec.count() {
            return Err(GlimError::Http(format!(
                "expected {} variants, got {}",
                spec.count(),
                variants.len()
            )));
        }
        if let Some(p) = path {
            let entry = CacheEntry {
                model: self.cfg.model.clone(),
                instruction: instruction.to_string(),
                text: text.to_string(),
                variants: variants.clone(),
            };
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir)?;
            }
            // Write-then-rename keeps concurrent writers idempotent.
            let tmp = p.with_extension(format!("tmp{}", std::process::id()));
            fs::write(&tmp, serde_json::to_vec_pretty(&entry).expect("cache entry serializes"))?;
            fs::rename(&tmp, &p)?;
        }
        Ok(variants)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtv::VariantType;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves `n` canned chat-completion responses, then stops.
    fn serve(n: usize, content: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming().take(n) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let reply = serde_json::json!({"choices": [{"message": {"content": content}}]}).to_string();
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    reply.len(),
                    reply
                )
                .unwrap();
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    #[test]
    fn answers_are_split_and_cached() {
        let endpoint = serve(1, "1. A good film.\n2) A fine film.\n");
        let dir = tempfile::tempdir().unwrap();
        let client = HttpParaphraser::new(HttpConfig {
            endpoint,
            cache_dir: Some(dir.path().to_path_buf()),
            timeout_secs: 5,
            ..HttpConfig::default()
        });
        let spec = VariantSpec::new(VariantType::Ls);
        let a = client.paraphrase("The film is great.", &spec, "instr", 0).unwrap();
        assert_eq!(a, vec!["A good film.", "A fine film."]);
        // The server is gone; the answer must come from the cache.
        let b = client.paraphrase("The film is great.", &spec, "instr", 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unreachable_endpoint_is_an_error() {
        let client = HttpParaphraser::new(HttpConfig {
            endpoint: "http://127.0.0.1:1/none".into(),
            timeout_secs: 2,
            ..HttpConfig::default()
        });
        let spec = VariantSpec::new(VariantType::Gs);
        assert!(matches!(client.paraphrase("x", &spec, "i", 0), Err(GlimError::Http(_))));
    }

    #[test]
    fn cache_keys_separate_models() {
        assert_ne!(
            HttpParaphraser::cache_key("t", "i", "a"),
            HttpParaphraser::cache_key("t", "i", "b")
        );
    }
}
