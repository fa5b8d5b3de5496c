//! The subcommands, minus `serve` which lives with the HTTP layer.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use anyhow::{anyhow, Context};
use npcsmith_core::emit::{package_modpack, unique_id_base, PackageTarget};
use npcsmith_core::expansion::expand_highlight;
use npcsmith_core::highlight::generate_highlights;
use npcsmith_core::llm::fixtures::{record_replay, FixtureMode};
use npcsmith_core::llm::{Gateway, ProviderHandle};
use npcsmith_core::model::{CharacterDescription, CharacterExpansion, Highlight};
use npcsmith_core::packcheck::{check_pack, PackReport};
use npcsmith_core::pipeline::{finalize_character, Finalized, PipelineError};
use npcsmith_core::Resources;

use crate::args::{live_provider, GenerateArgs, RecordArgs, ValidateArgs};
use crate::{CommandResult, ExitCode, Failure};

/// Maps a pipeline error to an exit status: problems with the provider or
/// the fixture store are environmental, the rest are content violations.
pub fn pipeline_failure(e: PipelineError) -> Failure {
    let environmental = e.is_environmental() || matches!(e, PipelineError::Description(_) | PipelineError::BadSlot(_));
    let error = anyhow::Error::new(e);
    if environmental {
        Failure::environment(error)
    } else {
        Failure::violation(error)
    }
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::environment(anyhow::Error::new(e).context("writing output"))
}

/// Outcome of a headless run.
pub struct Generated {
    pub highlights: Vec<Highlight>,
    pub selected: usize,
    pub expansion: CharacterExpansion,
    pub finalized: Finalized,
}

/// Runs the chain, letting `choose` pick the card to expand.
pub fn run_chain(
    text: &str,
    gateway: &Gateway,
    resources: &Resources,
    unique_id: Option<&str>,
    choose: impl FnOnce(&[Highlight]) -> Result<usize, Failure>,
) -> Result<Generated, Failure> {
    let description = CharacterDescription::new(text).map_err(|e| pipeline_failure(e.into()))?;
    let highlights = generate_highlights(&description, gateway).map_err(|e| pipeline_failure(e.into()))?;
    let selected = choose(&highlights)?;
    let card = highlights
        .get(selected)
        .ok_or_else(|| pipeline_failure(PipelineError::BadSlot(selected)))?;
    let expansion = expand_highlight(card, gateway).map_err(|e| pipeline_failure(e.into()))?;
    let id = unique_id
        .map(str::to_owned)
        .unwrap_or_else(|| unique_id_base(&resources.pack.author, &expansion.name));
    let finalized = finalize_character(&expansion, gateway, resources, &id).map_err(pipeline_failure)?;
    Ok(Generated {
        highlights,
        selected,
        expansion,
        finalized,
    })
}

fn print_cards(cards: &[Highlight], out: &mut dyn Write) -> std::io::Result<()> {
    for (i, card) in cards.iter().enumerate() {
        writeln!(out, "[{i}] {} ({}, {}): {}", card.name, card.age, card.birthday, card.title)?;
        for bullet in &card.bullets {
            writeln!(out, "      - {bullet}")?;
        }
        writeln!(out, "      \"{}\"", card.quote)?;
    }
    Ok(())
}

fn ask_for_card(cards: &[Highlight], input: &mut dyn BufRead, out: &mut dyn Write) -> Result<usize, Failure> {
    print_cards(cards, out).map_err(io_failure)?;
    loop {
        write!(out, "expand which card? [0-{}] ", cards.len() - 1).map_err(io_failure)?;
        out.flush().map_err(io_failure)?;
        let mut line = String::new();
        if input.read_line(&mut line).map_err(io_failure)? == 0 {
            return Err(Failure::environment(anyhow!("no card chosen")));
        }
        match line.trim().parse::<usize>() {
            Ok(i) if i < cards.len() => return Ok(i),
            _ => writeln!(out, "please enter a number from 0 to {}", cards.len() - 1).map_err(io_failure)?,
        }
    }
}

pub fn print_summary(run: &Generated, out: &mut dyn Write) -> std::io::Result<()> {
    let e = &run.expansion;
    let f = &run.finalized;
    writeln!(out, "{} - {} (card {})", e.name, e.title, run.selected)?;
    writeln!(
        out,
        "  {} dialogues, {} schedule stops{}",
        f.bundle.dialogues.len(),
        f.bundle.schedule.entries().count(),
        if f.bundle.repaired { ", config repaired" } else { "" }
    )?;
    for (category, items) in f.gifts.lists() {
        writeln!(out, "  {category}: {}", items.join(", "))?;
    }
    for notice in &f.notices {
        writeln!(out, "  note: {}: {}", notice.location, notice.message)?;
    }
    Ok(())
}

fn write_pack(run: &Generated, dir: Option<&std::path::Path>, zip: Option<&std::path::Path>, out: &mut dyn Write) -> Result<(), Failure> {
    let targets = dir
        .map(|d| PackageTarget::Directory(d.to_owned()))
        .into_iter()
        .chain(zip.map(|z| PackageTarget::Archive(z.to_owned())));
    for target in targets {
        let path = package_modpack(&run.finalized.pack, &target).map_err(Failure::environment)?;
        writeln!(out, "wrote {}", path.display()).map_err(io_failure)?;
    }
    Ok(())
}

pub fn generate(args: &GenerateArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> CommandResult {
    let text = args.description.read()?;
    CharacterDescription::new(&text).map_err(|e| pipeline_failure(e.into()))?;
    let resources = args.resources.resources()?;
    let gateway = Gateway::new(args.provider.provider()?);
    let run = run_chain(&text, &gateway, &resources, args.unique_id.as_deref(), |cards| {
        if args.interactive_select {
            ask_for_card(cards, input, out)
        } else {
            Ok(args.select)
        }
    })?;
    print_summary(&run, out).map_err(io_failure)?;
    write_pack(&run, args.out.as_deref(), args.zip.as_deref(), out)?;
    Ok(ExitCode::Success)
}

pub fn print_report(report: &PackReport, out: &mut dyn Write) -> std::io::Result<()> {
    for v in &report.config.violations {
        writeln!(out, "{:?} at {}: {}", v.kind, v.location, v.detail)?;
    }
    for problem in &report.problems {
        writeln!(out, "{problem}")?;
    }
    if report.is_clean() {
        writeln!(out, "pack is clean")?;
    }
    Ok(())
}

pub fn validate(args: &ValidateArgs, out: &mut dyn Write) -> CommandResult {
    let whitelist = args.resources.whitelist()?;
    let catalog: BTreeSet<String> = args.resources.item_names()?.into_iter().collect();
    let report = check_pack(&args.pack, &whitelist, Some(&catalog)).map_err(Failure::environment)?;
    if args.json {
        let text = serde_json::to_string_pretty(&report).context("encoding report").map_err(Failure::environment)?;
        writeln!(out, "{text}").map_err(io_failure)?;
    } else {
        print_report(&report, out).map_err(io_failure)?;
    }
    Ok(if report.is_clean() {
        ExitCode::Success
    } else {
        ExitCode::Violation
    })
}

pub fn record_provider(args: &RecordArgs) -> Result<ProviderHandle, Failure> {
    record_replay(FixtureMode::Record, Some(&args.fixtures), || {
        live_provider(args.script.as_deref(), args.base_url.as_deref())
    })
    .map_err(Failure::environment)
}

pub fn record(args: &RecordArgs, out: &mut dyn Write) -> CommandResult {
    let text = args.description.read()?;
    CharacterDescription::new(&text).map_err(|e| pipeline_failure(e.into()))?;
    let resources = args.resources.resources()?;
    let gateway = Gateway::new(record_provider(args)?);
    let run = run_chain(&text, &gateway, &resources, None, |_| Ok(args.select))?;
    print_summary(&run, out).map_err(io_failure)?;
    writeln!(out, "fixtures in {}", args.fixtures.display()).map_err(io_failure)?;
    write_pack(&run, args.out.as_deref(), None, out)?;
    Ok(ExitCode::Success)
}
