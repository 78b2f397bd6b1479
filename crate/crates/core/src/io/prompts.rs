use super::taxonomy::Taxonomy;

pub const PROMPT_TEMPLATE: &str = "A photo of a person is <ACTION> an object";

pub fn render_prompt(verb: &str) -> String {
    if verb.is_empty() {
        log::warn!("rendering prompt for an empty verb name");
    }
    PROMPT_TEMPLATE.replacen("<ACTION>", verb, 1)
}

/// One prompt per verb, in taxonomy order.
pub fn render_prompts(taxonomy: &Taxonomy) -> Vec<String> {
    taxonomy.verbs.iter().map(|v| render_prompt(v)).collect()
}
