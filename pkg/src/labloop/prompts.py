"""The prompt pack: every template the pipeline sends to a model.

Placeholders use ``str.format`` names.  Fixed protocol strings (fence label,
markers, decision and termination phrases) live here too so parsers and
prompts can never drift apart.

Response protocol used by all stages:

    THOUGHT:
    <free-form reasoning>

    <HEADER>:
    ```json
    { ... }
    ```

The fence label is ``json``; parsers take the last such fence.
"""

# ---------------------------------------------------------------------------
# Protocol constants
# ---------------------------------------------------------------------------

DECISION_NOVEL = "Decision made: novel."
DECISION_NOT_NOVEL = "Decision made: not novel."

#: Phrase the experiment planner includes when no further runs are needed.
EXPERIMENTS_DONE_PHRASE = "ALL_EXPERIMENTS_COMPLETED"

EMPTY_RESULTS_SENTINEL = "No results found."

FORMAT_RETRY_PROMPT_MISSING_QUERY = (
    "Your response made no decision and provided no Query. You must either "
    'add "Decision made: novel." or "Decision made: not novel." to your '
    'thoughts, or provide a "Query" field. Respond again in the exact same '
    "format."
)

# ---------------------------------------------------------------------------
# Idea generation
# ---------------------------------------------------------------------------

IDEA_SYSTEM_PROMPT = (
    "You are an ambitious AI PhD student who is looking to publish a paper "
    "that will contribute significantly to the field."
)

IDEA_GENERATION_PROMPT = """\
{task_description}
<experiment.py>
{code}
</experiment.py>

Here are the ideas that you have already generated:

'''
{prev_ideas_string}
'''

Come up with the next impactful and creative idea for research
experiments and directions you can feasibly investigate with the code
provided. Note that you will not have access to any additional resources
or datasets. Make sure any idea is not overfit the specific training
dataset or model, and has wider significance.

Respond in the following format:

THOUGHT:
<THOUGHT>

NEW IDEA JSON:
```json
<JSON>
```

In <THOUGHT>, first briefly discuss your intuitions and motivations for
the idea. Detail your high-level plan, necessary design choices and
ideal outcomes of the experiments. Justify how the idea is different
from the existing ones.

In <JSON>, provide the new idea in JSON format with the following fields:
- "Name": A shortened descriptor of the idea. Lowercase, no spaces,
underscores allowed.
- "Title": A title for the idea, will be used for the report writing.
- "Experiment": An outline of the implementation. E.g. which functions
need to be added or modified, how results will be obtained, ...
- "Interestingness": A rating from 1 to 10 (lowest to highest).
- "Feasibility": A rating from 1 to 10 (lowest to highest).
- "Novelty": A rating from 1 to 10 (lowest to highest).

Be cautious and realistic on your ratings.
This JSON will be automatically parsed, so ensure the format is precise.
You will have {num_reflections} rounds to iterate on the idea, but do
not need to use them all.
"""

IDEA_REFLECTION_PROMPT = """\
Round {current_round}/{num_reflections}.
In your thoughts, first carefully consider the quality, novelty and
feasibility of the idea you just created.
Include any other factors that you think are important in evaluating it.
Ensure the idea is clear and concise, and the JSON is in the correct format.
Do not make things overly complicated.
In the next attempt, try and refine and improve your idea.
Stick to the spirit of the original idea unless there are glaring issues.

Respond in the same format as before:
THOUGHT:
<THOUGHT>

NEW IDEA JSON:
```json
<JSON>
```

If there is nothing to improve, simply repeat the previous JSON EXACTLY
after the thought and include "I am done" at the end of the thoughts but
before the JSON.
ONLY INCLUDE "I am done" IF YOU ARE MAKING NO MORE CHANGES.
"""

# ---------------------------------------------------------------------------
# Novelty check
# ---------------------------------------------------------------------------

NOVELTY_SYSTEM_PROMPT = """\
You are an ambitious AI PhD student who is looking to publish a paper that
will contribute significantly to the field.
You have an idea and you want to check if it is novel or not. I.e., not
overlapping significantly with existing literature or already well explored.
Be a harsh critic for novelty, ensure there is a sufficient contribution in
the idea for a new conference or workshop paper.
You will be given access to the Semantic Scholar API, which you may use to
survey the literature and find relevant papers to help you make your
decision.
The top {results_limit} results for any search query will be presented to you with the
abstracts.

You will be given {num_rounds} to decide on the paper, but you do not need
to use them all.
At any round, you may exit early and decide on the novelty of the idea.
Decide a paper idea is novel if after sufficient searching, you have not
found a paper that significantly overlaps with your idea.
Decide a paper idea is not novel, if you have found a paper that
significantly overlaps with your idea.

{task_description}
<experiment.py>
{code}
</experiment.py>
"""

NOVELTY_ROUND_PROMPT = """\
Round {current_round}/{num_rounds}.
You have this idea:

\"\"\"
{idea}
\"\"\"

The results of the last query are (empty on first round):
\"\"\"
{last_query_results}
\"\"\"

Respond in the following format:

THOUGHT:
<THOUGHT>

RESPONSE:
```json
<JSON>
```

In <THOUGHT>, first briefly reason over the idea and identify any query that
could help you make your decision.
If you have made your decision, add "Decision made: novel." or
"Decision made: not novel." to your thoughts.

In <JSON>, respond in JSON format with ONLY the following field:
- "Query": An optional search query to search the literature (e.g. attention
is all you need). You must make a query if you have not decided this round.

A query will work best if you are able to recall the exact name of the paper
you are looking for, or the authors.
This JSON will be automatically parsed, so ensure the format is precise.
"""

# ---------------------------------------------------------------------------
# Experiment iteration (edit agent)
# ---------------------------------------------------------------------------

EDIT_FORMAT_INSTRUCTIONS = """\
When you change files, first name the file on its own line and then use
*SEARCH/REPLACE* blocks to perform the edits, like this:

experiment.py
```
<<<<<<< SEARCH
exact lines copied from the file
=======
the replacement lines
>>>>>>> REPLACE
```

Rules:
- The SEARCH text must match the file contents exactly (byte for byte) and
  must occur exactly once in the file.
- To create a new file, use an empty SEARCH section against the new path.
- Use one block per change; multiple blocks are applied in order.
"""

EXPERIMENT_SYSTEM_PROMPT = (
    "You are an AI researcher implementing and running experiments by "
    "editing the code in the current workspace.\n\n" + EDIT_FORMAT_INSTRUCTIONS
)

EXPERIMENT_RUN_PROMPT = """\
Your goal is to implement the following idea: {title}.
The proposed experiment is as follows: {idea}.
You are given a total of up to {max_runs} runs to complete the necessary
experiments. You do not need to use all {max_runs}.

First, plan the list of experiments you would like to run. For example,
if you are sweeping over a specific hyperparameter, plan each value you
would like to test for each run.

Note that we already provide the vanilla baseline results, so you do not
need to re-run it.

For reference, the baseline results are as follows:

{baseline_results}

After you complete each change, we will run the command `python
experiment.py --out_dir=run_i' where i is the run number and evaluate
the results.
YOUR PROPOSED CHANGE MUST USE THIS COMMAND FORMAT, DO NOT ADD ADDITIONAL
COMMAND LINE ARGS.
You can then implement the next thing on your list.
"""

EXPERIMENT_RESULTS_PROMPT = """\
Run {run_index} completed. Here are the results:

{results}

Decide if you need to re-plan your experiments given the result (you often
will not need to).

Someone else will be using `notes.txt` to perform a writeup on this in the
future. Please include *all* relevant information for the writeup on run
{run_index}, including an experiment description and the run number.
Be as verbose as necessary.

Then, implement the next thing on your list.
We will then run the command `python experiment.py --out_dir=run_{next_run_index}'.
YOUR PROPOSED CHANGE MUST USE THIS COMMAND FORMAT, DO NOT ADD ADDITIONAL
COMMAND LINE ARGS.
If you are finished with experiments, respond with "{done_phrase}" instead
of proposing an edit.
"""

EXPERIMENT_ERROR_PROMPT = """\
Run {run_index} failed with the following error:

{error}

Please fix the code so that the run succeeds, then we will re-run the
command `python experiment.py --out_dir=run_{run_index}'.
"""

PLOTTING_PROMPT = """\
Great job! Please modify `plot.py` to generate the most relevant plots for
the final writeup.

In particular, be sure to fill in the "labels" dictionary with the correct
names for each run that you want to plot.

Only the runs in the `labels` dictionary will be plotted, so make sure to
include all relevant runs.

We will be running the command `python plot.py` to generate the plots.

---

Please modify `notes.txt` with a description of what each plot shows along
with the filename of the figure. Please do so in-depth.

Somebody else will be using `notes.txt` to write a report on this in the
future.
"""

PLOTTING_ERROR_PROMPT = """\
Running `python plot.py` failed with the following error:

{error}

Please fix the plotting code, then we will re-run the command `python plot.py`.
"""

# ---------------------------------------------------------------------------
# Paper write-up
# ---------------------------------------------------------------------------

WRITEUP_SYSTEM_PROMPT = (
    "You are an AI researcher writing up completed experiments as a "
    "conference-style manuscript. Only use real experimental results in the "
    "form of notes and figures generated from code, and real citations. "
    "Never fabricate numbers, figures, or references."
)

SECTION_WRITE_PROMPT = """\
We've provided the `latex/template.tex` file to the project. We will be
filling it in section by section.

First, please fill in the {section} section of the writeup.

Some tips are provided below:
{per_section_tips}

Here are the experimental notes:
\"\"\"
{journal}
\"\"\"

The available figure files are:
{figures}

Sections already written:
\"\"\"
{written_sections}
\"\"\"

Do not include any citations at this stage; references are added later.

Respond in the following format:

THOUGHT:
<THOUGHT>

SECTION JSON:
```json
{{"Section": "{section}", "Text": "<the LaTeX body for this section>"}}
```

This JSON will be automatically parsed, so ensure the format is precise.
"""

SECTION_REFLECTION_PROMPT = """\
Round {current_round}/{num_reflections}.
In your thoughts, criticize your current version of the section for
verbosity, repetition, unsupported claims, and missing results that appear
in the notes. Then provide an improved version.

Respond in the same format as before:
THOUGHT:
<THOUGHT>

SECTION JSON:
```json
{{"Section": "...", "Text": "..."}}
```

If there is nothing to improve, simply repeat the previous JSON EXACTLY
after the thought and include "I am done" at the end of the thoughts but
before the JSON.
ONLY INCLUDE "I am done" IF YOU ARE MAKING NO MORE CHANGES.
"""

CITATION_ROUND_PROMPT = """\
Round {current_round}/{num_rounds}. You are collecting references for the
related work section and for any citations missing from the rest of the
paper. You may search the literature; the top results for any query will be
presented to you with the abstracts.

The current draft of the paper is:
\"\"\"
{draft}
\"\"\"

The results of the last query are (empty on first round):
\"\"\"
{last_query_results}
\"\"\"

Respond in the following format:

THOUGHT:
<THOUGHT>

RESPONSE:
```json
<JSON>
```

In <JSON>, respond with the following fields:
- "Query": An optional search query to search the literature. You must make
a query if you select no papers this round.
- "Selected": A list of objects, one per result you want to cite, each with
an integer "Index" into the last results and a "Description" of where and
how to include the citation in the paper.

If you have gathered enough references, add "I am done" to your thoughts
and return an empty "Selected" list and no "Query".
This JSON will be automatically parsed, so ensure the format is precise.
"""

CITATION_EDIT_PROMPT = """\
Add the following reference to the paper. Its bibtex entry has already been
appended to `latex/references.bib`, so cite it with \\cite{{{citation_key}}}.

Where and how to include the citation:
{description}

Paper title: {paper_title}
Authors: {paper_authors}
Abstract: {paper_abstract}

Edit `latex/template.tex` accordingly. The related work section must discuss
the papers cited there, not merely list them.
"""

REFINEMENT_PROMPT = """\
Great job! Now criticize and refine only the {section} section.
The current text is:
\"\"\"
{text}
\"\"\"

Identify any duplication of content with the other sections, unenforceable
claims, verbosity, or artifacts from the experimental log (such as referring
to results as "Run 2"), and streamline the arguments of the paper.

Respond in the following format:

THOUGHT:
<THOUGHT>

SECTION JSON:
```json
{{"Section": "{section}", "Text": "<the refined LaTeX body>"}}
```

This JSON will be automatically parsed, so ensure the format is precise.
"""

LATEX_REPAIR_PROMPT = """\
Compiling the LaTeX manuscript failed. Here is the relevant excerpt of the
compiler/linter output:

{error_excerpt}

Please fix `latex/template.tex` (or other files under `latex/`) so that the
document compiles.
"""

# ---------------------------------------------------------------------------
# Automated review
# ---------------------------------------------------------------------------

REVIEW_SYSTEM_PROMPT = (
    "You are an AI researcher who is reviewing a paper that was submitted "
    "to a prestigious ML venue. Be critical and cautious in your decision. "
    "If a paper is bad or you are unsure, give it bad scores and reject it."
)

REVIEW_PROMPT = """\
## Review Form
Below is a description of the questions you will be asked on the review form
for each paper and some guidelines on what to consider when answering these
questions.
When writing your review, please keep in mind that after decisions have been
made, reviews and meta-reviews of accepted papers and opted-in rejected
papers will be made public.

{reviewer_guidelines}

{few_shot_examples}

Here is the paper you are asked to review:
```
{paper}
```

Respond in the following format:

THOUGHT:
<THOUGHT>

REVIEW JSON:
```json
<JSON>
```

In <THOUGHT>, first briefly discuss your intuitions and reasoning for the
evaluation.

In <JSON>, provide the review in JSON format with the following fields in
this order:
- "Summary": A summary of the paper content and its contributions.
- "Strengths": A list of strengths of the paper.
- "Weaknesses": A list of weaknesses of the paper.
- "Originality": A rating from 1 to 4 (low, medium, high, very high).
- "Quality": A rating from 1 to 4 (low, medium, high, very high).
- "Clarity": A rating from 1 to 4 (low, medium, high, very high).
- "Significance": A rating from 1 to 4 (low, medium, high, very high).
- "Questions": A set of clarifying questions to be answered by the paper
authors.
- "Limitations": A set of limitations and potential negative societal
impacts of the work.
- "Ethical Concerns": A boolean value indicating whether there are ethical
concerns.
- "Soundness": A rating from 1 to 4 (poor, fair, good, excellent).
- "Presentation": A rating from 1 to 4 (poor, fair, good, excellent).
- "Contribution": A rating from 1 to 4 (poor, fair, good, excellent).
- "Overall": A rating from 1 to 10 (very strong reject to award quality).
- "Confidence": A rating from 1 to 5 (low, medium, high, very high, absolute).
- "Decision": A decision that has to be one of the following: Accept, Reject.

This JSON will be automatically parsed, so ensure the format is precise.
"""

REVIEW_REFLECTION_PROMPT = """\
Round {current_round}/{num_reflections}.
In your thoughts, first carefully consider the accuracy and soundness of
the review you just created.
Include any other factors that you think are important in evaluating the
paper.
Ensure the review is clear and concise, and the JSON is in the correct
format.
Do not make things overly complicated.
In the next attempt, try and refine and improve your review.
Stick to the spirit of the original review unless there are glaring
issues.

Respond in the same format as before:
THOUGHT:
<THOUGHT>

REVIEW JSON:
```json
<JSON>
```

If there is nothing to improve, simply repeat the previous JSON EXACTLY
after the thought and include "I am done" at the end of the thoughts but
before the JSON.
ONLY INCLUDE "I am done" IF YOU ARE MAKING NO MORE CHANGES.
"""

META_REVIEW_SYSTEM_PROMPT = """\
You are an Area Chair at a machine learning conference.
You are in charge of meta-reviewing a paper that was reviewed by
{reviewer_count} reviewers.
Your job is to aggregate the reviews into a single meta-review in the same
format.
Be critical and cautious in your decision, find consensus, and respect the
opinion of all the reviewers.
"""


def render_reviews_for_meta(review_texts: list[str], reviewer_guidelines: str) -> str:
    """Lay out ensemble member reviews as ``Review i/N`` blocks."""
    n = len(review_texts)
    parts = []
    for i, text in enumerate(review_texts, start=1):
        parts.append(f"Review {i}/{n}:\n{text}\n")
    parts.append(reviewer_guidelines)
    parts.append(
        "\nRespond in the same format as the reviewers:\n\nTHOUGHT:\n<THOUGHT>\n\n"
        "REVIEW JSON:\n```json\n<JSON>\n```"
    )
    return "\n".join(parts)
