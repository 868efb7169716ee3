"""GenQA: generate answers from ranked answer-sentence candidates.

The pipeline ranks candidate sentences for a question, builds
sequence-to-sequence training examples from the top candidates, trains a
small encoder-decoder to generate answers, evaluates with ranking and
text-overlap metrics, and collects blinded human judgments.
"""

__version__ = "0.1.0"
