"""Prompt templates and the section headers shared by request builders and the mock."""

HISTORY_HEADER = "Interaction history (oldest first, most recent last):"
PROFILE_HEADER = "User profile:"
CANDIDATES_HEADER = "Candidates:"
PROMPT_OPEN = "<<<PROMPT"
PROMPT_CLOSE = "PROMPT>>>"
SUMMARY_OPEN = "<<<SUMMARY"
SUMMARY_CLOSE = "SUMMARY>>>"
FEEDBACK_HEADER = "Position feedback:"
METRIC_HEADER = "Ranking quality:"
RANKED_HEADER = "Reranked list:"
FINAL_MARKER = "FINAL:"

DEFAULT_SEED_PROMPT = """\
You write a short preference profile for a recommender-system user.
You are given the titles of items the user interacted with, oldest first.
Describe the user's tastes as bullet points:
- the genres or topics they engage with,
- anything their most recent interactions suggest,
- anything they appear to avoid.
Keep the profile under 120 words and do not list the titles themselves."""

PROFILE_USER = """\
{header}
{history}

Write the profile now."""

RERANK_SYSTEM = """\
You rerank a fixed list of recommendation candidates for one user.
Use only the information given. Every candidate must appear exactly once.
Answer with one candidate per line, best first, in the form "1. [index]"."""

RERANK_AGP_USER = """\
{profile_header}
{profile}

{candidates_header}
{candidates}

Return all {k} candidate indices, best first."""

RERANK_DIR_USER = """\
{history_header}
{history}

{candidates_header}
{candidates}

Return all {k} candidate indices, best first."""

COT_SYSTEM = """\
You rerank a fixed list of recommendation candidates for one user.
Think step by step: first infer what the user likes from the history, then
judge each candidate against it. Every candidate must appear exactly once.
End your answer with a single line of the form
FINAL: <comma-separated candidate indices, best first>"""

LOSS_SYSTEM = """\
You audit a user profile that was used to rerank recommendations.
Explain concisely why the profile failed to put the user's ground-truth items
at their target positions, and what the profile-generation prompt should do
differently. Refer to each ground-truth item's position and target."""

LOSS_USER_PBF = """\
Profile-generation prompt:
{prompt_open}
{prompt}
{prompt_close}

{history_header}
{history}

{profile_header}
{profile}

{ranked_header}
{ranked}

{feedback_header}
{pairs}"""

LOSS_SYSTEM_METRIC = """\
You audit a user profile that was used to rerank recommendations.
Explain concisely what the profile-generation prompt should do differently,
given the overall ranking quality."""

LOSS_USER_METRIC = """\
Profile-generation prompt:
{prompt_open}
{prompt}
{prompt_close}

{history_header}
{history}

{profile_header}
{profile}

{metric_header} NDCG@10 = {ndcg:.4f}"""

SUMMARIZE_SYSTEM = """\
You consolidate diagnoses from several users into a short list of
improvements to a shared profile-generation prompt. Entries are ordered by
importance and tagged HIGH, MED or LOW; weigh them accordingly. Keep advice
that applies across users; drop quirks that only concern a single user.
Keep the positions and targets that support each point."""

SUMMARIZE_USER = """\
Feedback from {n} users, most important first:

{blocks}

Write the consolidated improvements as bullet points."""

OPTIMIZE_SYSTEM = """\
You revise a profile-generation prompt used by a recommender system.
Apply the feedback summary to the prompt. Respect the edit budget.
Return only the full revised prompt, with no commentary."""

OPTIMIZE_USER = """\
Current prompt:
{prompt_open}
{prompt}
{prompt_close}

Feedback summary:
{summary_open}
{summary}
{summary_close}

{directive}"""

INTENSITY_DIRECTIVES = {
    "light": (
        "Update intensity: LIGHT (batch weight {wt:.3f}). Ranking errors are small; "
        "edit at most 1 instruction and keep everything else verbatim."
    ),
    "moderate": (
        "Update intensity: MODERATE (batch weight {wt:.3f}). Edit or add at most 3 "
        "instructions; keep the rest verbatim."
    ),
    "aggressive": (
        "Update intensity: AGGRESSIVE (batch weight {wt:.3f}). Ranking errors are large; "
        "you may rewrite the prompt freely."
    ),
}


def numbered(lines) -> str:
    return "\n".join(f"{i}. {line}" for i, line in enumerate(lines, start=1))


def candidate_lines(items) -> str:
    """``items`` is a sequence of (item_id, title)."""
    return "\n".join(f"[{i}] {title} (id: {item_id})" for i, (item_id, title) in enumerate(items, start=1))
