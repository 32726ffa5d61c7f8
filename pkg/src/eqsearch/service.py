"""HTTP search service over immutable artifacts: corpus, vocabulary,
checkpoint, embedding store and optional approximate index. Stateless per
request; artifacts are loaded once at startup.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .corpus import Corpus, load_corpus
from .graph import MalformedXmlError, UnknownTagError, Vocabulary, encode
from .index import EmbeddingStore, RpTreeIndex, bow_embed, load_index, load_store
from .latex import LatexSyntaxError, compile_latex_subset
from .model import EquationEncoder, batch_graphs, load_checkpoint

MAX_RESULTS = 1000


@dataclass
class SearchArtifacts:
    corpus: Corpus
    vocab: Vocabulary
    model: EquationEncoder | None
    store: EmbeddingStore
    index: RpTreeIndex | None = None

    @property
    def uses_bow(self) -> bool:
        return self.store.dim != 64


def load_artifacts(corpus_dir: str | Path, vocab_path: str | Path,
                   checkpoint_path: str | Path | None, store_path: str | Path,
                   index_path: str | Path | None = None) -> SearchArtifacts:
    corpus = load_corpus(corpus_dir)
    vocab = Vocabulary.load(vocab_path)
    model = None
    if checkpoint_path is not None:
        model, _ = load_checkpoint(checkpoint_path, vocab.content_hash())
    store = load_store(store_path)
    index = load_index(index_path, store) if index_path else None
    return SearchArtifacts(corpus=corpus, vocab=vocab, model=model,
                           store=store, index=index)


class SearchRequest(BaseModel):
    query: str
    k: int = Field(default=10, ge=1, le=MAX_RESULTS)


class SearchResult(BaseModel):
    eq_id: str
    paper_id: str
    section_index: int
    score: float
    latex: str
    mathml: str


class SearchResponse(BaseModel):
    results: list[SearchResult]


def embed_query(artifacts: SearchArtifacts, query: str) -> np.ndarray:
    """LaTeX or MathML -> query vector via the same pipeline as indexing."""
    text = query.strip()
    mathml = text if text.startswith("<") else compile_latex_subset(text)
    graph = encode(mathml, artifacts.vocab)
    if artifacts.uses_bow:
        return bow_embed(graph)
    assert artifacts.model is not None, "64-d store needs a checkpoint"
    import torch

    with torch.no_grad():
        batch = batch_graphs([graph], dtype=artifacts.model.dtype)
        return artifacts.model.embed(batch, training=False).numpy()[0]


def run_search(artifacts: SearchArtifacts, query: str, k: int) -> list[SearchResult]:
    vector = embed_query(artifacts, query)
    if artifacts.index is not None:
        ranked = artifacts.index.query(vector, k)
    else:
        from .index import query_exact

        ranked = query_exact(artifacts.store, vector, k)
    results = []
    for eq_id, score in ranked:
        record = artifacts.corpus.equations[eq_id]
        results.append(SearchResult(
            eq_id=eq_id, paper_id=record.paper_id,
            section_index=record.section_index, score=score,
            latex=record.latex, mathml=record.mathml,
        ))
    return results


def create_app(artifacts: SearchArtifacts) -> FastAPI:
    app = FastAPI(title="eqsearch", version="0.1.0")

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok", "n": artifacts.store.n}

    @app.get("/api/equation/{eq_id}")
    def equation(eq_id: str) -> dict:
        record = artifacts.corpus.equations.get(eq_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown equation {eq_id}")
        return {
            "eq_id": record.eq_id, "paper_id": record.paper_id,
            "section_index": record.section_index,
            "latex": record.latex, "mathml": record.mathml,
        }

    @app.post("/api/search")
    def search(request: SearchRequest) -> SearchResponse:
        try:
            return SearchResponse(results=run_search(artifacts, request.query, request.k))
        except LatexSyntaxError as exc:
            raise HTTPException(status_code=400, detail={
                "message": str(exc), "position": exc.position,
            }) from exc
        except (MalformedXmlError, UnknownTagError) as exc:
            raise HTTPException(status_code=400, detail={
                "message": f"query could not be encoded: {exc}", "position": 0,
            }) from exc

    return app


def serve(artifacts: SearchArtifacts, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(artifacts), host=host, port=port, log_level="warning")
