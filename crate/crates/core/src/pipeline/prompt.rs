//! Prompt templates for the text generator.
//!
//! Each template is a system block and a user block joined by a blank line.
//! Output depends only on the inputs, byte for byte.

use serde::{Deserialize, Serialize};

use super::{FinalContext, PipelineError};
use crate::corpus::EntityRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    #[default]
    Evqa,
    Infoseek,
    Summary,
}

impl std::str::FromStr for PromptStyle {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "evqa" => Ok(Self::Evqa),
            "infoseek" => Ok(Self::Infoseek),
            "summary" => Ok(Self::Summary),
            other => Err(PipelineError::UnknownStyle(other.to_string())),
        }
    }
}

impl std::fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Evqa => "evqa",
            Self::Infoseek => "infoseek",
            Self::Summary => "summary",
        })
    }
}

const SUMMARY_SYSTEM: &str = "\
You are a Wiki Summary Generator Assistant. Following is some information about you:

## Profile
- name: Wiki Summary Generator Assistant
- language: English
- description: The Wiki Summary Generator Assistant is designed to create concise and informative summaries based on provided Wikipedia content. It extracts key aspects of the entity mentioned in the Wiki article, covering various dimensions such as history, characteristics, significance, appearance and impact.

## Workflows
1. Input the provided Wikipedia content into the system.
2. Identify the main sections and key information related to the entity.
3. Synthesize this information into a well-structured summary.
4. Review and refine the summary for clarity, coherence, and completeness before finalizing.

## Rules
1. Focus on summarizing key details across multiple aspects (e.g., appearance, features, impact) of the entity.
2. Ensure the summary is concise, clear, and free of irrelevant details.
3. Retain the original meaning and context of the Wiki content while rephrasing it into a summary.";

const EVQA_SYSTEM: &str = "\
You are a helpful assistant for answering encyclopedic questions.
If the context does not contain the information required to answer the question, you should answer the question using internal model knowledge.";

const INFOSEEK_SYSTEM: &str = "\
You are a helpful assistant for answering encyclopedic questions. Do not answer anything else.
If you need to answer questions about numbers or time, please output the corresponding numerical format directly. If the context does not contain the information required to answer the question, you should answer the question using internal model knowledge.
There is an example:
- Context: # Wiki Article: Dolomites
## Section Title: Dolomites
The Dolomites, also known as the Dolomite Mountains, Dolomite Alps or Dolomitic Alps, are a mountain range located in northeastern Italy. The Dolomites are located in the regions of Veneto, Trentino-Alto Adige/Südtirol and Friuli Venezia Giulia, covering an area shared between the provinces of Belluno, Vicenza, Verona, Trentino, South Tyrol, Udine and Pordenone.
- Question: Which city or region does this mountain locate in?
Just answer the questions , no explanations needed. Short answer is: Province of Belluno";

fn summary_user(content: &str) -> String {
    format!(
        "Following is the input Wikipedia content:\n\n{content}\n\nBased on the above Wikipedia content, I would like you to generate a summary of the Wikipedia content.\nHere is the summary of the Wikipedia content:"
    )
}

/// Renders the retrieved section the way the one-shot example does.
pub fn render_context(ctx: &FinalContext) -> String {
    let heading = if ctx.section.heading.is_empty() {
        &ctx.title
    } else {
        &ctx.section.heading
    };
    format!("# Wiki Article: {}\n## Section Title: {}\n{}", ctx.title, heading, ctx.section.body)
}

pub fn assemble_prompt(ctx: &FinalContext, question: &str, style: PromptStyle) -> String {
    let context = render_context(ctx);
    match style {
        PromptStyle::Evqa => format!("{EVQA_SYSTEM}\n\n- Context: {context}\n- Question: {question}\nThe answer is:"),
        PromptStyle::Infoseek => format!(
            "{INFOSEEK_SYSTEM}\n\n- Context: {context}\n- Question: {question}\nJust answer the questions , no explanations needed. Short answer is:"
        ),
        PromptStyle::Summary => format!("{SUMMARY_SYSTEM}\n\n{}", summary_user(&context)),
    }
}

/// Offline summary prompt over a whole article.
pub fn summary_prompt(entity: &EntityRecord) -> String {
    let content = format!("# Wiki Article: {}\n{}", entity.title, entity.article_text());
    format!("{SUMMARY_SYSTEM}\n\n{}", summary_user(&content))
}
