//! The same query rendered without demonstrations, with one demonstration
//! and with the symbolic templates.
//!
//! cargo run --example prompt_styles

use lmprobe::corpus::{FactTriple, RelationTemplate, TemplateStyle};
use lmprobe::prompt::{assemble_prompt, PromptOptions, Separator};

fn main() -> lmprobe::Result<()> {
    let is_a = RelationTemplate::parse("P31", "[X] is a [Y] .", TemplateStyle::NaturalLanguage, None)?;
    let fact = |s: &str, o: &str| FactTriple::new(s, "P31", o);
    let query = fact("Rodmarton", "village")?;
    let options = PromptOptions::new("[MASK]");

    println!("{}", assemble_prompt(&query, &[], &is_a, &options)?.text);
    println!("{}", assemble_prompt(&query, &[fact("M.S.I. Airport", "airport")?], &is_a, &options)?.text);
    println!("{}", assemble_prompt(&query, &[fact("Nantmor", "village")?], &is_a, &options)?.text);

    let demos = [
        fact("Totopara", "village")?,
        fact("The argument", "album")?,
        fact("Tisza", "river")?,
    ];
    for style in [TemplateStyle::ArrowDouble, TemplateStyle::ArrowSingle, TemplateStyle::Semicolon] {
        let t = RelationTemplate::symbolic("P31", style)?;
        println!("{}", assemble_prompt(&query, &demos, &t, &options)?.text);
    }

    // one demonstration per line
    let lines = options.with_separator(Separator::Newline);
    let t = RelationTemplate::symbolic("P31", TemplateStyle::ArrowDouble)?;
    println!("{}", assemble_prompt(&query, &demos, &t, &lines)?.text);
    Ok(())
}
