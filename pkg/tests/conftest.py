"""Shared builders for hand-specified parse trees used across test modules."""

from __future__ import annotations

from typing import Optional, Sequence

import pytest

from rexl.corpus import RelationInstance, Token


def make_instance(
    forms: Sequence[str],
    heads: Sequence[Optional[int]],
    deprels: Sequence[str],
    subj_span: tuple[int, int],
    obj_span: tuple[int, int],
    subj_type: str = "PERSON",
    obj_type: str = "PERSON",
    relation: str = "per:children",
    ners: Optional[Sequence[str]] = None,
    instance_id: str = "t-0",
) -> RelationInstance:
    """Build a validated instance from parallel arrays; heads are 0-based."""
    assert len(forms) == len(heads) == len(deprels)
    tokens = []
    for i, form in enumerate(forms):
        if ners is not None:
            ner = ners[i]
        elif subj_span[0] <= i <= subj_span[1]:
            ner = subj_type
        elif obj_span[0] <= i <= obj_span[1]:
            ner = obj_type
        else:
            ner = "O"
        tokens.append(Token(
            form=form,
            lemma=form.lower(),
            pos="NN",
            ner=ner,
            head=heads[i],
            deprel=deprels[i],
        ))
    inst = RelationInstance(
        id=instance_id,
        tokens=tuple(tokens),
        subj_span=subj_span,
        obj_span=obj_span,
        subj_type=subj_type,
        obj_type=obj_type,
        gold_relation=relation,
    )
    inst.validate()
    return inst


@pytest.fixture
def family_instance() -> RelationInstance:
    """"John 's daughter , Emma , likes swimming ." with an appositive tree."""
    return make_instance(
        forms=["John", "'s", "daughter", ",", "Emma", ",", "likes", "swimming", "."],
        heads=[2, 0, 6, 4, 2, 4, None, 6, 6],
        deprels=["nmod:poss", "case", "nsubj", "punct", "appos", "punct",
                 "root", "xcomp", "punct"],
        subj_span=(0, 0),
        obj_span=(4, 4),
        relation="per:children",
        instance_id="family-0",
    )


@pytest.fixture
def birth_instance() -> RelationInstance:
    """"John was born in London ." with subject person and object city."""
    return make_instance(
        forms=["John", "was", "born", "in", "London", "."],
        heads=[2, 2, None, 4, 2, 2],
        deprels=["nsubj", "aux", "root", "case", "obl", "punct"],
        subj_span=(0, 0),
        obj_span=(4, 4),
        subj_type="PERSON",
        obj_type="CITY",
        relation="per:city_of_birth",
        instance_id="birth-0",
    )
