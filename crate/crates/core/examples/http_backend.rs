//! Score prompts through a running model server.
//!
//! cargo run --example http_backend -- http://127.0.0.1:8000 "Paris is the capital of [MASK] ."

use lmprobe::prompt::PromptString;
use lmprobe::corpus::TemplateStyle;
use lmprobe::scorer::{fill_mask, score_candidates, HttpOptions, HttpScorer, Scorer};

fn main() -> lmprobe::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(url) = args.next().or_else(|| std::env::var("LMPROBE_BACKEND_URL").ok()) else {
        eprintln!("usage: http_backend URL [PROMPT]");
        std::process::exit(2);
    };
    let backend = HttpScorer::connect(&url, HttpOptions::default())?;
    let d = backend.descriptor();
    println!("{} mask={} hidden={} vocab={}", d.backend_id, d.mask_token, d.hidden_size, d.vocabulary.len());

    let text = args.next().unwrap_or_else(|| format!("Paris is the capital of {} .", d.mask_token));
    let prompt = PromptString::from_text(text, &d.mask_token, TemplateStyle::NaturalLanguage);
    let dist = fill_mask(&backend, &prompt, None)?;
    for e in dist.entries().iter().take(5) {
        println!("  {:12} {:.4}", e.token, e.prob);
    }
    let candidates = ["France".to_string(), "New York".to_string()];
    for (c, s) in score_candidates(&backend, &prompt, &candidates)? {
        println!("  {c:12} {s:.4}");
    }
    Ok(())
}
