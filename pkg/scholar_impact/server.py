"""MCP server exposing impact scoring, prediction and evaluation as tools"""

import json
import logging
import sys
from datetime import date
from typing import Dict, List, Optional

from mcp.server import FastMCP

from .config import Settings
from .core_metrics import MetricKind, fit_exponential, same_period_window, score_paper, tncsi_sp_value
from .models import PaperRecord
from .predictor import ConstantPredictor, HashRandomPredictor, ImpactPredictor, NativePredictor, RemotePredictor
from .ranking_eval import Prediction, evaluate
from .reports import DEFAULT_FRACTIONS, journal_report

logger = logging.getLogger(__name__)


class ScholarImpactServer:
    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or Settings()
        self.settings.validate_settings()
        self.server = FastMCP(self.settings.server_name)
        self._scholar = None
        self._chat = None
        self._setup_tools()

    @property
    def scholar(self):
        if self._scholar is None:
            from .scholar_gateway import ScholarGateway

            self._scholar = ScholarGateway(self.settings.gateway_config())
        return self._scholar

    @property
    def chat(self):
        if self._chat is None:
            from .llm_client import ChatGateway

            self.settings.require_llm()
            self._chat = ChatGateway(self.settings.llm_config())
        return self._chat

    def compute_impact_score(
        self,
        citation_count: int,
        cohort_citation_counts: Optional[List[int]] = None,
        topic_phrase: Optional[str] = None,
        publication_date: Optional[str] = None,
    ) -> Dict:
        if cohort_citation_counts:
            fit = fit_exponential(cohort_citation_counts)
            return {
                "kind": "supplied_cohort",
                "value": tncsi_sp_value(citation_count, fit),
                "lambda": fit.rate,
                "cohort_size": fit.n,
            }

        if not topic_phrase or not publication_date:
            raise ValueError("provide cohort_citation_counts, or topic_phrase with publication_date")
        published = date.fromisoformat(publication_date)
        window = same_period_window(published, self.settings.half_span_months)
        cohort = self.scholar.search_cohort(
            topic_phrase, window=window, capacity=self.settings.cohort_capacity, anchor_date=published,
        )
        paper = PaperRecord(
            paper_id="query", title=topic_phrase, citation_count=citation_count, publication_date=published,
        )
        score = score_paper(paper, cohort, MetricKind.TNCSI_SP)
        return {
            "kind": score.kind.value,
            "value": score.value,
            "lambda": score.fit.rate,
            "cohort_size": score.cohort_size,
            "window": [window.start.isoformat(), window.end.isoformat()],
        }

    def evaluate_predictions(self, predictions: List[Dict], k: Optional[int] = None) -> Dict:
        pairs = [
            Prediction(item_id=str(p.get("id", i)), truth=p["truth"], predicted=p["predicted"])
            for i, p in enumerate(predictions)
        ]
        return evaluate(pairs, k or self.settings.ndcg_k).model_dump()

    def predict_impact(
        self,
        title: str,
        abstract: str,
        predictor: str = "remote",
        params_path: Optional[str] = None,
    ) -> Dict:
        model: ImpactPredictor
        if predictor == "native":
            if not params_path:
                raise ValueError("params_path is required for the native predictor")
            model = NativePredictor.from_file(params_path)
        elif predictor == "remote":
            model = RemotePredictor(self.chat)
        elif predictor == "hash":
            model = HashRandomPredictor(self.settings.seed)
        elif predictor == "constant":
            model = ConstantPredictor()
        else:
            raise ValueError(f"unknown predictor '{predictor}'")
        return {"predictor": predictor, "predicted": model.predict(title, abstract)}

    def journal_quartile_report(self, groups: Dict[str, List[float]], fractions: Optional[List[float]] = None) -> Dict:
        return journal_report(groups, fractions or DEFAULT_FRACTIONS).model_dump()

    def _setup_tools(self):
        """Register MCP tools"""

        @self.server.tool()
        async def compute_impact_score(
            citation_count: int,
            cohort_citation_counts: Optional[List[int]] = None,
            topic_phrase: Optional[str] = None,
            publication_date: Optional[str] = None,
        ) -> str:
            """Normalised impact of a citation count against a cohort

            Args:
                citation_count: Citations of the paper being scored
                cohort_citation_counts: Citation counts of comparable papers (skips retrieval)
                topic_phrase: Topic key phrase used to retrieve a same-period cohort
                publication_date: YYYY-MM-DD publication date anchoring the window

            Returns:
                JSON with the score in [0, 1], the fitted rate and the cohort size
            """
            try:
                result = self.compute_impact_score(
                    citation_count, cohort_citation_counts, topic_phrase, publication_date
                )
                return json.dumps(result, indent=2)
            except Exception as e:
                logger.error(f"Error computing impact score: {e}")
                return f"Error computing impact score: {str(e)}"

        @self.server.tool()
        async def evaluate_predictions(predictions: List[Dict], k: Optional[int] = None) -> str:
            """MAE and NDCG@K for predicted scores

            Args:
                predictions: Objects with id, truth and predicted, all scores in [0, 1]
                k: NDCG cutoff (default from settings, normally 20)
            """
            try:
                return json.dumps(self.evaluate_predictions(predictions, k), indent=2)
            except Exception as e:
                logger.error(f"Error evaluating predictions: {e}")
                return f"Error evaluating predictions: {str(e)}"

        @self.server.tool()
        async def predict_impact(
            title: str,
            abstract: str,
            predictor: str = "remote",
            params_path: Optional[str] = None,
        ) -> str:
            """Predict the normalised impact of a paper from its title and abstract

            Args:
                title: Paper title
                abstract: Paper abstract
                predictor: remote, native, hash or constant
                params_path: Saved parameters for the native predictor
            """
            try:
                return json.dumps(self.predict_impact(title, abstract, predictor, params_path), indent=2)
            except Exception as e:
                logger.error(f"Error predicting impact: {e}")
                return f"Error predicting impact: {str(e)}"

        @self.server.tool()
        async def journal_quartile_report(
            groups: Dict[str, List[float]],
            fractions: Optional[List[float]] = None,
        ) -> str:
            """Mean of the top 5% / 25% predictions and the overall mean per group"""
            try:
                return json.dumps(self.journal_quartile_report(groups, fractions), indent=2)
            except Exception as e:
                logger.error(f"Error building quartile report: {e}")
                return f"Error building quartile report: {str(e)}"

    def run(self):
        """Run the MCP server"""
        logger.info(f"Starting {self.settings.server_name} MCP server")
        self.server.run()


def main():
    """Main entry point"""
    if "--stdio" in sys.argv or len(sys.argv) == 1:
        settings = Settings()
        logging.basicConfig(level=settings.log_level.upper(), stream=sys.stderr)
        ScholarImpactServer(settings).run()
    else:
        print("Scholar impact MCP server")
        print("Usage: python -m scholar_impact.server [--stdio]")
        print("\nAvailable tools:")
        print("  - compute_impact_score: TNCSI_SP of a citation count against a cohort")
        print("  - evaluate_predictions: MAE and NDCG@K of predicted scores")
        print("  - predict_impact: Impact prediction from title and abstract")
        print("  - journal_quartile_report: Top-fraction means per journal quartile")


if __name__ == "__main__":
    main()
