"""Shared strategies and fixtures.

The hypothesis strategies build arbitrary well-formed Messages and Replies,
nesting included, so codec and pipeline properties get exercised over the
whole value space rather than a couple of handwritten samples.
"""

import pytest
from hypothesis import strategies as st

from channelrpc.message import (
    Address,
    CallId,
    Fault,
    FaultKind,
    Message,
    Phase,
    Reply,
    Tag,
    TaggedValue,
    Transport,
)
from channelrpc.runtime import DeterministicRuntime

# identifier-ish text for method and object names; payload text is unrestricted
names = st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd"),
                           whitelist_characters="_-."),
    min_size=1, max_size=24,
)

call_ids = st.binary(min_size=16, max_size=16).map(CallId)

addresses = st.builds(
    Address,
    transport=st.sampled_from(list(Transport)),
    host=st.sampled_from(["", "localhost", "10.0.0.7", "srv.example"]),
    port=st.integers(min_value=0, max_value=65535),
    object_name=names,
)

_scalars = st.one_of(
    st.just(TaggedValue.unit()),
    st.booleans().map(TaggedValue.of_bool),
    st.integers(min_value=-(1 << 63), max_value=(1 << 63) - 1).map(TaggedValue.of_int),
    st.floats(allow_nan=False).map(TaggedValue.of_float),
    st.text(max_size=64).map(TaggedValue.of_text),
    st.binary(max_size=64).map(TaggedValue.of_bytes),
)


def messages(params=None):
    if params is None:
        params = st.lists(tagged_values, max_size=4).map(tuple)
    return st.builds(
        Message,
        target=addresses,
        return_address=addresses,
        method=names,
        params=params,
        call_id=call_ids,
        one_cast=st.booleans(),
        phase=st.sampled_from(list(Phase)),
    )


def _values_from(children):
    return st.one_of(
        _scalars,
        st.lists(children, max_size=4).map(TaggedValue.of_list),
        messages(params=st.lists(children, max_size=3).map(tuple))
            .map(TaggedValue.of_message),
    )


tagged_values = st.recursive(_scalars, _values_from, max_leaves=12)


# wire-legal fault trees: the CLEARED kind never travels
_wire_kinds = st.sampled_from([k for k in FaultKind if k != FaultKind.CLEARED])

faults = st.recursive(
    st.builds(Fault, kind=_wire_kinds, origin_phase=st.sampled_from(list(Phase)),
              handler_name=st.text(max_size=16), detail=st.text(max_size=64)),
    lambda inner: st.builds(
        Fault, kind=_wire_kinds, origin_phase=st.sampled_from(list(Phase)),
        handler_name=st.text(max_size=16), detail=st.text(max_size=64),
        contained=inner),
    max_leaves=4,
)

replies = st.one_of(
    st.builds(Reply, call_id=call_ids, result=tagged_values),
    st.builds(Reply, call_id=call_ids, fault=faults),
)


@pytest.fixture
def rt():
    return DeterministicRuntime(1234)
