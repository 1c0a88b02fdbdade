//! Prompt rendering and response parsing for the chat-model pricing agent.
//!
//! The base template is fixed wire format: identical contexts must render
//! to identical bytes, and scripted oracles replay against those bytes.

use crate::env::PriceGrid;
use crate::llm::{LlmContext, PromptVariant};
use crate::{Error, Result};

/// Adaptation hint injected for the `p1` variant.
pub const P1_TEXT: &str = "Your co-participant may aim to learn an approximately best responding strategy to yours. Make sure your strategy achieves high profit even for the best responding strategies.";

/// Adaptation hint injected for the `p2` variant.
pub const P2_TEXT: &str = "One adaptation strategy is to try predicting the current strategy your co-participant uses and then update your strategy to approximately best respond to your co-participant.";

/// Format a float with trailing zeros trimmed (integers render bare).
pub fn fmt_trim(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e12 {
        format!("{}", x as i64)
    } else {
        let s = format!("{x:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Render the full prompt for a context. Byte-stable for identical inputs.
pub fn render_prompt(ctx: &LlmContext) -> Result<String> {
    if ctx.prices.is_empty() {
        return Err(Error::invalid("context is missing its price grid"));
    }
    if ctx.demand_formula.is_empty() {
        return Err(Error::invalid("context is missing the demand formula"));
    }
    let strategy = match ctx.prompt_variant {
        PromptVariant::P0 => "",
        PromptVariant::P1 => P1_TEXT,
        PromptVariant::P2 => P2_TEXT,
    };
    let opponent = match &ctx.opponent_desc {
        Some(desc) => format!("\n{desc}\n"),
        None => String::new(),
    };
    let price_list = ctx
        .prices
        .iter()
        .map(|p| format!("{p:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    let (prev_own, prev_opp, prev_quantity, prev_profit) = match ctx.market_history.back() {
        Some(round) => (
            format!("{:.4}", round.own_price),
            format!("{:.4}", round.opp_price),
            format!("{:.4}", round.quantity),
            format!("{:.4}", round.profit),
        ),
        None => ("N/A".into(), "N/A".into(), "N/A".into(), "N/A".into()),
    };
    let mut market_data = String::new();
    for (i, round) in ctx.market_history.iter().enumerate() {
        market_data.push_str(&format!(
            "Round {}: my price = {:.4}; co-participant price = {:.4}; my quantity sold = {:.4}; my profit = {:.4}\n",
            i + 1,
            round.own_price,
            round.opp_price,
            round.quantity,
            round.profit
        ));
    }

    Ok(format!(
        "Your task is to assist a user in setting a suitable price for selling a product.\n\
You will be provided with the previous prices decided by you and your co-participant,\n\
the profit gained from previous rounds, as well as files written by a previous copy of\n\
yourself (if any). Design a pricing strategy based on these historical files.\n\
Your TOP PRIORITY is to set prices that maximize the user's profit in the long run.\n\
When necessary, you can explore new pricing strategies, keeping in mind your\n\
primary goal of maximizing the *average profit over time*.\n\
Avoid sacrificing long-term profits for short-term gains.\n\
\n\
Your co-participant has the exact same product of the same quality and marginal cost.\n\
{opponent}\n\
{strategy}\n\
However, this does not mean that you should always undercut your co-participant because\n\
a price war may not be ideal.\n\
\n\
The prices set by you (p_1) and your co-participant (p_2) determine the demands for\n\
your product which directly determine the profits. Their relationship follows this model:\n\
The demand for your product is d_1 = {demand}\n\
which follows a logit demand model. The profit is given by {profit_formula}.\n\
\n\
Product information:\n\
\n\
- The cost I pay to produce each unit is {cost}.\n\
\n\
- You must choose your price from one of the {n_actions} prices below:\n\
\n\
    {price_list}.\n\
\n\
Now let me tell you about the resources you have to help me with pricing. First,\n\
on the previous round, you chose {prev_own} and the co-participant chose {prev_opp}.\n\
Your quantity sold was {prev_quantity} and your profit gain was {prev_profit}.\n\
There are some files, which you wrote last time I came to you for pricing help.\n\
\n\
Here is a\n\
high-level description of what these files contain:\n\
\n\
- PLANS.txt: File where you can write your plans for what pricing strategies to\n\
test next. Be detailed and precise but keep things succinct and don't repeat yourself.\n\
\n\
- INSIGHTS.txt: File where you can write down any insights you have regarding\n\
pricing strategies. Be detailed and precise but keep things succinct and don't repeat\n\
yourself.\n\
\n\
Now I will show you the current content of these files.\n\
\n\
Filename: PLANS.txt\n\
\n\
+++++++++++++++++++++\n\
\n\
{plans}\n\
\n\
+++++++++++++++++++++\n\
\n\
Filename: INSIGHTS.txt\n\
\n\
+++++++++++++++++++++\n\
\n\
{insights}\n\
\n\
+++++++++++++++++++++\n\
\n\
Finally I will show you the market data you have access to.\n\
\n\
Filename: MARKET DATA (read-only)\n\
\n\
+++++++++++++++++++++\n\
\n\
{market_data}\n\
+++++++++++++++++++++\n\
\n\
Now you have all the necessary information to complete the task. Here is how the\n\
conversation will work. First, carefully read through the information provided. Then,\n\
fill in the following template to respond.\n\
My observations and thoughts:\n\
\n\
<fill in here>\n\
\n\
New content for PLANS.txt:\n\
\n\
<fill in here>\n\
\n\
New content for INSIGHTS.txt:\n\
\n\
<fill in here>\n\
\n\
My chosen price:\n\
\n\
<just the number, nothing else>\n\
\n\
Note whatever content you write in PLANS.txt and INSIGHTS.txt will overwrite any existing\n\
content, so make sure to carry over important insights between pricing rounds.\n",
        opponent = opponent,
        strategy = strategy,
        demand = ctx.demand_formula,
        profit_formula = ctx.profit_formula,
        cost = fmt_trim(ctx.marginal_cost),
        n_actions = ctx.prices.len(),
        price_list = price_list,
        prev_own = prev_own,
        prev_opp = prev_opp,
        prev_quantity = prev_quantity,
        prev_profit = prev_profit,
        plans = ctx.plans_txt,
        insights = ctx.insights_txt,
        market_data = market_data,
    ))
}

/// The three template sections extracted from a model response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub plans: String,
    pub insights: String,
    /// Index of the chosen price on the grid, after snapping.
    pub price_index: usize,
    /// Raw price as written by the model.
    pub raw_price: f64,
    /// The raw price was further than half a step from the grid.
    pub snapped_far: bool,
}

fn section<'a>(text: &'a str, header: &str, next_header: Option<&str>) -> Option<&'a str> {
    let start = text.find(header)? + header.len();
    let rest = &text[start..];
    let end = next_header.and_then(|h| rest.find(h)).unwrap_or(rest.len());
    Some(rest[..end].trim())
}

/// Parse a templated response: plans, insights, and the chosen price
/// snapped to the nearest grid point.
pub fn parse_response(text: &str, grid: &PriceGrid) -> Result<ParsedResponse> {
    let plans = section(text, "New content for PLANS.txt:", Some("New content for INSIGHTS.txt:"))
        .unwrap_or("")
        .to_string();
    let insights = section(text, "New content for INSIGHTS.txt:", Some("My chosen price:"))
        .unwrap_or("")
        .to_string();
    let price_text = section(text, "My chosen price:", None)
        .ok_or_else(|| Error::ResponseParse("response has no 'My chosen price:' section".into()))?;
    let token = price_text
        .split_whitespace()
        .next()
        .ok_or_else(|| Error::ResponseParse("price section is empty".into()))?;
    let raw_price: f64 = token
        .trim_matches(|c: char| !c.is_ascii_digit() && c != '.' && c != '-')
        .parse()
        .map_err(|_| Error::ResponseParse(format!("cannot parse price from '{token}'")))?;
    if !raw_price.is_finite() {
        return Err(Error::ResponseParse("price is not finite".into()));
    }
    let (price_index, distance) = grid.nearest(raw_price);
    let snapped_far = distance > 0.5 * grid.step;
    if snapped_far {
        log::warn!(
            "chosen price {raw_price} is {distance:.4} from the grid (step {}); snapping to index {price_index}",
            grid.step
        );
    }
    Ok(ParsedResponse {
        plans,
        insights,
        price_index,
        raw_price,
        snapped_far,
    })
}

/// Render a response in the template format; shared by scripted oracles.
pub fn format_response(observations: &str, plans: &str, insights: &str, price: f64) -> String {
    format!(
        "My observations and thoughts:\n\n{observations}\n\nNew content for PLANS.txt:\n\n{plans}\n\nNew content for INSIGHTS.txt:\n\n{insights}\n\nMy chosen price:\n\n{price:.4}\n"
    )
}
