"""Tests for key phrase extraction and prompt evaluation"""

import random
import tempfile
import unittest
from pathlib import Path
from unittest.mock import Mock

from pydantic import ValidationError

from scholar_impact.exceptions import EmptyResponse, MissingPlaceholder, SchemaViolation, TransportFailure
from scholar_impact.keyphrase import (
    BUILTIN_TEMPLATES,
    AnnotatedTopicExample,
    FailurePolicy,
    evaluate_template,
    extract_keyphrase,
    get_template,
    load_annotated_examples,
    normalize_keyphrase,
    render_keyphrase_prompt,
)
from scholar_impact.models import PaperRecord
from scholar_impact.prompt_library import PromptTemplate

FIXTURES = Path(__file__).parent / "fixtures"


class TestTemplates(unittest.TestCase):
    """Test suite for the built-in key phrase templates"""

    def test_builtin_names(self):
        """Test the three built-in templates are registered"""
        self.assertEqual(set(BUILTIN_TEMPLATES), {"research_field", "main_area", "application_technology"})
        self.assertEqual(get_template().name, "application_technology")

    def test_unknown_template(self):
        """Test an unknown name raises KeyError"""
        with self.assertRaises(KeyError):
            get_template("nope")

    def test_application_technology_golden(self):
        """Test exact rendering of the default template"""
        rendered = render_keyphrase_prompt(get_template("application_technology"), "T", "A")
        self.assertEqual(
            rendered,
            "Given the title and abstract below, determine the specific research field by focusing on "
            "the main application area and the key technology. You MUST respond with the keyword ONLY "
            "in this format: xxx.\nTitle: T\nAbstract: A",
        )

    def test_research_field_golden(self):
        """Test exact rendering of the shortest template"""
        rendered = render_keyphrase_prompt(get_template("research_field"), "T", "A")
        self.assertEqual(
            rendered,
            "Identify the research field from the given title and abstract. "
            "You MUST respond with the keyword ONLY in this format: xxx\nTitle: T\nAbstract: A",
        )

    def test_values_spliced_verbatim(self):
        """Test braces inside values are not expanded"""
        rendered = render_keyphrase_prompt(get_template("main_area"), "Sets {title}", "A {abstract} B")
        self.assertIn("Title: Sets {title}\n", rendered)
        self.assertTrue(rendered.endswith("Abstract: A {abstract} B"))

    def test_rendering_distinguishes_inputs(self):
        """Test different title/abstract pairs never render to the same prompt"""
        pairs = [
            ("Deep nets", "Vision."), ("Deep", "nets Vision."), ("Deep nets Vision.", "x"),
            ("Deep nets", "Vision. "), ("deep nets", "Vision."), ("", "Deep nets Vision."),
            ("Deep nets\nAbstract: Vision.", ""), ("Vision.", "Deep nets"),
        ]
        for template in BUILTIN_TEMPLATES.values():
            prompts = {render_keyphrase_prompt(template, title, abstract) for title, abstract in pairs}
            self.assertEqual(len(prompts), len(pairs), template.name)

    def test_placeholder_validation(self):
        """Test templates must contain each placeholder exactly once"""
        with self.assertRaises(MissingPlaceholder):
            PromptTemplate(name="broken", body="Title: {title}").validate()
        with self.assertRaises(MissingPlaceholder):
            PromptTemplate(name="twice", body="{title} {title} {abstract}").validate()


class TestNormalize(unittest.TestCase):
    """Test suite for key phrase normalisation"""

    def test_examples(self):
        """Test trimming, lowercasing and peeling"""
        self.assertEqual(normalize_keyphrase("  Machine Translation. "), "machine translation")
        self.assertEqual(normalize_keyphrase("\"Image Classification.\""), "image classification")
        self.assertEqual(normalize_keyphrase("'GNNs'!;"), "gnns")
        self.assertEqual(normalize_keyphrase("..."), "")

    def test_label_prefix(self):
        """Test a leading label is peeled along with quotes"""
        self.assertEqual(normalize_keyphrase("Key phrase: \"Deep Learning\"."), "deep learning")
        self.assertEqual(normalize_keyphrase("Keyword: GNNs"), "gnns")
        self.assertEqual(normalize_keyphrase("topic:speech recognition"), "speech recognition")
        self.assertEqual(normalize_keyphrase("topic modeling"), "topic modeling")

    def test_idempotent(self):
        """Test normalising twice changes nothing"""
        samples = ["  \"'Speech Recognition.'\" ", "Low-Rank Adaptation;", "“quoted”", "x", "", "a. b."]
        for sample in samples:
            once = normalize_keyphrase(sample)
            self.assertEqual(normalize_keyphrase(once), once, sample)


class TestExtract(unittest.TestCase):
    """Test suite for single-paper extraction"""

    def setUp(self):
        """Set up test fixtures"""
        self.gateway = Mock()
        self.paper = PaperRecord(paper_id="p1", title="Oracle-MNIST", abstract="A dataset of oracle characters.")

    def test_extract(self):
        """Test the rendered prompt is sent and the reply normalised"""
        self.gateway.complete.return_value = "Image Classification."
        template = get_template()

        phrase = extract_keyphrase(self.paper, template, self.gateway)

        self.assertEqual(phrase, "image classification")
        prompt = self.gateway.complete.call_args.args[0]
        self.assertEqual(prompt, render_keyphrase_prompt(template, self.paper.title, self.paper.abstract))

    def test_blank_reply(self):
        """Test a reply with nothing left after normalisation"""
        self.gateway.complete.return_value = "\"\"."
        with self.assertRaises(EmptyResponse):
            extract_keyphrase(self.paper, get_template(), self.gateway)

    def test_missing_abstract(self):
        """Test extraction needs an abstract"""
        paper = PaperRecord(paper_id="p2", title="Only a title", abstract="")
        with self.assertRaises(ValueError):
            extract_keyphrase(paper, get_template(), self.gateway)
        self.gateway.complete.assert_not_called()

    def test_gateway_errors_propagate(self):
        """Test transport failures are not swallowed"""
        self.gateway.complete.side_effect = TransportFailure("down")
        with self.assertRaises(TransportFailure):
            extract_keyphrase(self.paper, get_template(), self.gateway)


class TestEvaluateTemplate(unittest.TestCase):
    """Test suite for mean NED evaluation"""

    def setUp(self):
        """Set up test fixtures"""
        self.examples = [
            AnnotatedTopicExample(title="First", abstract="one", gold_phrase="image classification"),
            AnnotatedTopicExample(title="Second", abstract="two", gold_phrase="speech"),
            AnnotatedTopicExample(title="Third", abstract="three", gold_phrase="graphs"),
        ]
        self.replies = {"First": "Image Classification", "Second": "speeck", "Third": "graphs."}

    def reply(self, prompt, system_prompt=None):
        for title, answer in self.replies.items():
            if f"Title: {title}\n" in prompt:
                if isinstance(answer, Exception):
                    raise answer
                return answer
        raise AssertionError(prompt)

    def gateway(self):
        gateway = Mock()
        gateway.complete.side_effect = self.reply
        return gateway

    def test_mean_ned(self):
        """Test per-example NED and the mean"""
        result = evaluate_template(get_template(), self.examples, self.gateway(), max_workers=3)

        self.assertEqual(result.template, "application_technology")
        self.assertEqual(result.scored, 3)
        self.assertEqual(result.skipped, 0)
        self.assertEqual(result.per_example, [0.0, 1 / 6, 0.0])
        self.assertAlmostEqual(result.mean_ned, 1 / 18)

    def test_fail_fast(self):
        """Test the first failure aborts the evaluation"""
        self.replies["Second"] = TransportFailure("down")
        with self.assertRaises(TransportFailure):
            evaluate_template(get_template(), self.examples, self.gateway())

    def test_skip_failures(self):
        """Test skipped examples are excluded from the mean"""
        self.replies["Second"] = EmptyResponse("nothing")
        with self.assertLogs("scholar_impact.keyphrase", level="WARNING"):
            result = evaluate_template(get_template(), self.examples, self.gateway(), policy=FailurePolicy.SKIP)

        self.assertEqual(result.scored, 2)
        self.assertEqual(result.skipped, 1)
        self.assertIsNone(result.per_example[1])
        self.assertEqual(result.mean_ned, 0.0)

    def test_skip_example_without_abstract(self):
        """Test an example that cannot be rendered is skipped, not fatal"""
        self.examples[1] = AnnotatedTopicExample.model_construct(title="Second", abstract="", gold_phrase="speech")
        with self.assertLogs("scholar_impact.keyphrase", level="WARNING"):
            result = evaluate_template(get_template(), self.examples, self.gateway(), policy=FailurePolicy.SKIP)

        self.assertEqual((result.scored, result.skipped), (2, 1))
        self.assertIsNone(result.per_example[1])

    def test_permutation_invariant(self):
        """Test the mean does not depend on example order"""
        baseline = evaluate_template(get_template(), self.examples, self.gateway())
        rng = random.Random(4)
        for _ in range(5):
            shuffled = list(self.examples)
            rng.shuffle(shuffled)
            result = evaluate_template(get_template(), shuffled, self.gateway(), max_workers=2)
            self.assertAlmostEqual(result.mean_ned, baseline.mean_ned, delta=1e-12)
            by_title = {e.title: s for e, s in zip(shuffled, result.per_example)}
            self.assertEqual(by_title, {e.title: s for e, s in zip(self.examples, baseline.per_example)})

    def test_all_skipped(self):
        """Test a template with no successful example is an error"""
        self.replies = {k: TransportFailure("down") for k in self.replies}
        with self.assertLogs("scholar_impact.keyphrase", level="WARNING"):
            with self.assertRaises(EmptyResponse):
                evaluate_template(get_template(), self.examples, self.gateway(), policy=FailurePolicy.SKIP)

    def test_empty_examples(self):
        """Test an empty annotated set is refused"""
        with self.assertRaises(ValueError):
            evaluate_template(get_template(), [], self.gateway())


class TestAnnotatedExamples(unittest.TestCase):
    """Test suite for annotated example files"""

    def test_load(self):
        """Test gold and topic keys are both accepted and normalised"""
        examples = load_annotated_examples(FIXTURES / "topic_phrases_sample.jsonl")

        self.assertEqual(len(examples), 3)
        self.assertEqual(examples[0].gold_phrase, "image classification")
        self.assertEqual(examples[1].gold_phrase, "machine translation")
        self.assertEqual(examples[2].gold_phrase, "molecular property prediction")

    def test_bad_line(self):
        """Test a record without a gold phrase names its line"""
        with self.assertRaises(SchemaViolation) as ctx:
            load_annotated_examples(FIXTURES / "topic_phrases_bad.jsonl")
        self.assertEqual(ctx.exception.line_number, 2)

    def test_blank_abstract_rejected(self):
        """Test blank titles and abstracts are refused, with the file line"""
        with self.assertRaises(ValidationError):
            AnnotatedTopicExample(title="t", abstract="  ", gold_phrase="speech")

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "phrases.jsonl"
            path.write_text(
                '{"title": "Fine", "abstract": "Fine.", "gold": "fine"}\n'
                '{"title": "No abstract", "gold": "speech"}\n',
                encoding="utf-8",
            )
            with self.assertRaises(SchemaViolation) as ctx:
                load_annotated_examples(path)
        self.assertEqual(ctx.exception.line_number, 2)

    def test_empty_gold_rejected(self):
        """Test a gold phrase that normalises to nothing"""
        with self.assertRaises(ValidationError):
            AnnotatedTopicExample(title="t", abstract="a", gold_phrase=" '.' ")


if __name__ == '__main__':
    unittest.main()
