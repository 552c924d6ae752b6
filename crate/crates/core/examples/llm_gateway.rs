//! Prompt construction, the gateway's cache and ledger, and replaying a
//! recorded session without a live backend.
//!
//! Set `LGPLUG_LLM_ENDPOINT` (and optionally `LGPLUG_LLM_MODEL`,
//! `LGPLUG_LLM_API_KEY`) to also send one prompt to an OpenAI-compatible
//! endpoint.
//!
//! ```text
//! cargo run -p lgplug --example llm_gateway
//! ```

use std::time::Duration;

use lgplug::llm::{
    build_prompt, make_keyword_oracle, parse_response, LlmGateway, QueryContext, QueryLedger, RemoteChat, ReplayCache,
    ResponseCache, RetryPolicy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let categories = vec!["Theory".to_string(), "Reinforcement Learning".to_string()];
    let prompt = build_prompt("machine learning papers", &categories, "A study of protein folding pathways.")?;
    println!("{}\n(hash {}, ~{} tokens)\n", prompt.rendered_text, prompt.hash(), prompt.token_estimate());

    let dir = tempfile::tempdir()?;
    let oracle = make_keyword_oracle(vec![("protein".into(), "Biology".into())], "Other")?;
    let gateway = LlmGateway::new(Box::new(oracle), RetryPolicy::immediate()).with_cache(ResponseCache::in_dir(dir.path())?);
    let mut ledger = QueryLedger::new();
    let ctx = QueryContext {
        cluster: Some(0),
        node_id: Some("n1".into()),
    };
    let (first, is_new) = gateway.query(&prompt, &ctx, &mut ledger)?;
    gateway.query(&prompt, &ctx, &mut ledger)?;
    println!("answer {first:?} (new category: {is_new})");
    println!("parsed: {:?}", parse_response(&first, &categories));
    println!(
        "ledger: {} records, {} queries, {} cache hits, ~{} tokens",
        ledger.len(),
        ledger.query_count(),
        ledger.cache_hits(),
        ledger.token_total()
    );

    let replay = LlmGateway::new(Box::new(ReplayCache::new(ResponseCache::in_dir(dir.path())?)), RetryPolicy::immediate());
    let (again, _) = replay.query(&prompt, &ctx, &mut QueryLedger::new())?;
    println!("replayed answer {again:?}");

    if std::env::var("LGPLUG_LLM_ENDPOINT").is_ok() {
        let remote = RemoteChat::from_env(None, None, Duration::from_secs(30))?;
        let live = LlmGateway::new(Box::new(remote), RetryPolicy::default());
        let (answer, _) = live.query(&prompt, &ctx, &mut QueryLedger::new())?;
        println!("remote answer {answer:?}");
    }
    Ok(())
}
