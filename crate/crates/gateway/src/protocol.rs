//! Chunk formats of the OpenAI-compatible streaming endpoints.
//!
//! Chat chunks carry per-token logprobs in `choices[0].logprobs.content[]`
//! with `top_logprobs: [{token, logprob}]`; legacy completion chunks carry
//! `choices[0].logprobs.{tokens, token_logprobs, top_logprobs: [{token: lp}]}`.

use serde_json::{json, Value};

use crate::error::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Chat,
    Completions,
}

impl Endpoint {
    pub fn path(self) -> &'static str {
        match self {
            Endpoint::Chat => "chat/completions",
            Endpoint::Completions => "completions",
        }
    }

    fn object(self) -> &'static str {
        match self {
            Endpoint::Chat => "chat.completion.chunk",
            Endpoint::Completions => "text_completion",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamToken {
    pub text: String,
    pub top_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedChunk {
    pub tokens: Vec<StreamToken>,
    pub finish_reason: Option<String>,
}

fn missing(field: &str, detail: impl Into<String>) -> GatewayError {
    GatewayError::MissingField {
        missing_field: field.to_string(),
        detail: detail.into(),
    }
}

/// Extracts the tokens of one upstream chunk. A chunk that carries text but
/// no usable logprobs is a contract violation.
pub fn parse_chunk(endpoint: Endpoint, chunk: &Value) -> Result<ParsedChunk, GatewayError> {
    let Some(choice) = chunk.get("choices").and_then(|c| c.get(0)) else {
        if chunk.get("choices").is_some_and(Value::is_array) || chunk.get("usage").is_some() {
            return Ok(ParsedChunk::default());
        }
        return Err(missing("choices", "chunk has no choices array"));
    };
    let finish_reason = choice.get("finish_reason").and_then(Value::as_str).map(str::to_string);
    let tokens = match endpoint {
        Endpoint::Chat => chat_tokens(choice)?,
        Endpoint::Completions => completion_tokens(choice)?,
    };
    Ok(ParsedChunk { tokens, finish_reason })
}

fn chat_tokens(choice: &Value) -> Result<Vec<StreamToken>, GatewayError> {
    let content = choice.pointer("/delta/content").and_then(Value::as_str).unwrap_or("");
    if content.is_empty() {
        return Ok(vec![]);
    }
    const FIELD: &str = "choices[0].logprobs.content";
    let entries = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
        .filter(|e| !e.is_empty())
        .ok_or_else(|| missing(FIELD, "request logprobs=true and top_logprobs>=1 upstream"))?;
    entries
        .iter()
        .map(|entry| {
            let top = entry
                .get("top_logprobs")
                .and_then(Value::as_array)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| missing("choices[0].logprobs.content[].top_logprobs", "empty or absent"))?;
            let top_logprobs = top
                .iter()
                .map(|t| t.get("logprob").and_then(Value::as_f64))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| missing("choices[0].logprobs.content[].top_logprobs[].logprob", "non-numeric"))?;
            let text = if entries.len() == 1 {
                content.to_string()
            } else {
                entry
                    .get("token")
                    .and_then(Value::as_str)
                    .ok_or_else(|| missing("choices[0].logprobs.content[].token", "multi-token chunk"))?
                    .to_string()
            };
            Ok(StreamToken { text, top_logprobs })
        })
        .collect()
}

fn completion_tokens(choice: &Value) -> Result<Vec<StreamToken>, GatewayError> {
    let text = choice.get("text").and_then(Value::as_str).unwrap_or("");
    if text.is_empty() {
        return Ok(vec![]);
    }
    const FIELD: &str = "choices[0].logprobs.top_logprobs";
    let tops = choice
        .pointer("/logprobs/top_logprobs")
        .and_then(Value::as_array)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| missing(FIELD, "request logprobs=k upstream"))?;
    let token_texts = choice.pointer("/logprobs/tokens").and_then(Value::as_array);
    tops.iter()
        .enumerate()
        .map(|(i, top)| {
            let top_logprobs = top
                .as_object()
                .filter(|m| !m.is_empty())
                .and_then(|m| m.values().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                .ok_or_else(|| missing(FIELD, "each entry must map tokens to logprobs"))?;
            let text = if tops.len() == 1 {
                text.to_string()
            } else {
                token_texts
                    .and_then(|t| t.get(i))
                    .and_then(Value::as_str)
                    .ok_or_else(|| missing("choices[0].logprobs.tokens", "multi-token chunk"))?
                    .to_string()
            };
            Ok(StreamToken { text, top_logprobs })
        })
        .collect()
}

/// Visible text of a chunk of either kind.
pub fn chunk_text(chunk: &Value) -> &str {
    let choice = &chunk["choices"][0];
    choice["delta"]["content"]
        .as_str()
        .or_else(|| choice["text"].as_str())
        .unwrap_or("")
}

pub fn chunk_finish_reason(chunk: &Value) -> Option<&str> {
    chunk["choices"][0]["finish_reason"].as_str()
}

/// Chunk for token `index` of a chunk holding `count` tokens; single-token
/// chunks are relayed unchanged.
pub fn token_chunk(endpoint: Endpoint, original: &Value, index: usize, count: usize, text: &str) -> Value {
    if count == 1 {
        return original.clone();
    }
    let mut out = original.clone();
    let choice = &mut out["choices"][0];
    if index + 1 != count {
        choice["finish_reason"] = Value::Null;
    }
    match endpoint {
        Endpoint::Chat => {
            choice["delta"]["content"] = json!(text);
            if let Some(entry) = original["choices"][0].pointer("/logprobs/content").and_then(|c| c.get(index)) {
                choice["logprobs"]["content"] = json!([entry]);
            }
        }
        Endpoint::Completions => {
            choice["text"] = json!(text);
            if let Some(lp) = choice.get_mut("logprobs").and_then(Value::as_object_mut) {
                for (_, v) in lp.iter_mut() {
                    if let Some(item) = v.as_array().and_then(|a| a.get(index)).cloned() {
                        *v = json!([item]);
                    }
                }
            }
        }
    }
    out
}

/// A synthetic chunk carrying `text`, stamped with `template`'s id and model.
pub fn text_chunk(endpoint: Endpoint, template: &Value, text: &str, finish_reason: Option<&str>) -> Value {
    let choice = match endpoint {
        Endpoint::Chat => json!({"index": 0, "delta": {"content": text}, "logprobs": null, "finish_reason": finish_reason}),
        Endpoint::Completions => json!({"index": 0, "text": text, "logprobs": null, "finish_reason": finish_reason}),
    };
    json!({
        "id": template.get("id").cloned().unwrap_or(json!("rpdi-gateway")),
        "object": endpoint.object(),
        "created": template.get("created").cloned().unwrap_or(json!(0)),
        "model": template.get("model").cloned().unwrap_or(Value::Null),
        "choices": [choice],
    })
}

/// Plain-text rendering of chat messages for raw-completion continuations.
pub fn render_messages(messages: &[Value]) -> String {
    let mut out = String::new();
    for m in messages {
        let role = m["role"].as_str().unwrap_or("user");
        let content = m["content"].as_str().unwrap_or("");
        out.push_str(&format!("<|{role}|>\n{content}\n"));
    }
    out.push_str("<|assistant|>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_chunk_tokens() {
        let c = json!({"choices":[{"index":0,"delta":{"content":"Hi"},"logprobs":{"content":[
            {"token":"Hi","logprob":-0.1,"top_logprobs":[{"token":"Hi","logprob":-0.1},{"token":"Yo","logprob":-2.4}]}
        ]},"finish_reason":null}]});
        let p = parse_chunk(Endpoint::Chat, &c).unwrap();
        assert_eq!(p.tokens, vec![StreamToken { text: "Hi".into(), top_logprobs: vec![-0.1, -2.4] }]);
        assert_eq!(chunk_text(&c), "Hi");
    }

    #[test]
    fn role_and_usage_chunks_have_no_tokens() {
        let role = json!({"choices":[{"index":0,"delta":{"role":"assistant","content":""},"finish_reason":null}]});
        assert!(parse_chunk(Endpoint::Chat, &role).unwrap().tokens.is_empty());
        let usage = json!({"choices":[],"usage":{"completion_tokens":3}});
        assert!(parse_chunk(Endpoint::Chat, &usage).unwrap().tokens.is_empty());
        assert!(parse_chunk(Endpoint::Chat, &json!({"foo":1})).is_err());
    }

    #[test]
    fn missing_logprobs_names_the_field() {
        let c = json!({"choices":[{"index":0,"delta":{"content":"x"},"finish_reason":null}]});
        match parse_chunk(Endpoint::Chat, &c) {
            Err(GatewayError::MissingField { missing_field, .. }) => assert_eq!(missing_field, "choices[0].logprobs.content"),
            other => panic!("{other:?}"),
        }
        let c = json!({"choices":[{"index":0,"text":"x","logprobs":null}]});
        match parse_chunk(Endpoint::Completions, &c) {
            Err(GatewayError::MissingField { missing_field, .. }) => assert_eq!(missing_field, "choices[0].logprobs.top_logprobs"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn completion_multi_token_chunk_splits() {
        let c = json!({"choices":[{"index":0,"text":"ab","logprobs":{
            "tokens":["a","b"],"token_logprobs":[-0.5,-0.2],
            "top_logprobs":[{"a":-0.5,"z":-1.0},{"b":-0.2,"y":-1.8,"x":-3.0}]},"finish_reason":"stop"}]});
        let p = parse_chunk(Endpoint::Completions, &c).unwrap();
        assert_eq!(p.tokens[1].text, "b");
        assert_eq!(p.tokens[1].top_logprobs, vec![-0.2, -1.8, -3.0]);
        let first = token_chunk(Endpoint::Completions, &c, 0, 2, "a");
        assert_eq!(chunk_text(&first), "a");
        assert_eq!(chunk_finish_reason(&first), None);
        assert_eq!(first["choices"][0]["logprobs"]["tokens"], json!(["a"]));
        let last = token_chunk(Endpoint::Completions, &c, 1, 2, "b");
        assert_eq!(chunk_finish_reason(&last), Some("stop"));
    }

    #[test]
    fn synthetic_chunks() {
        let t = json!({"id":"c1","created":5,"model":"m"});
        let c = text_chunk(Endpoint::Chat, &t, "</think>", None);
        assert_eq!(chunk_text(&c), "</think>");
        assert_eq!(c["id"], "c1");
        let r = render_messages(&[json!({"role":"user","content":"hi"})]);
        assert_eq!(r, "<|user|>\nhi\n<|assistant|>\n");
    }
}
