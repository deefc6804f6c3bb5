"""Literal interpreter of the retrieval state-transition table.

It shares no code with the engine: the script is a list of relevance bits in
rank order plus one (usefulness pattern, support verdict) pair per answer
round.
"""

from __future__ import annotations


class NeedsMoreRounds(Exception):
    pass


def interpret(n_docs, batch_size, max_docs, rel, rounds):
    """Return (events, status, docs_examined, context) for a verdict script.

    ``rel[i]`` is the relevance of the i-th ranked document. Each round is
    ``(uses, sup)`` where ``uses`` lists the usefulness verdicts in the order
    they are asked and ``sup`` is "True", "Partial" or "False".
    """
    F = False
    C = []
    cursor = 0
    examined = 0
    events = []
    used = 0
    answered = False
    limit = min(n_docs, max_docs)
    starts = list(range(0, limit, batch_size))
    for b, start in enumerate(starts, 1):
        cursor = b
        for d in range(start, min(start + batch_size, limit)):
            examined += 1
            if rel[d]:  # isRel True: store the document, raise the flag
                C.append(d)
                F = True
            events.append(("isRel", F, tuple(C), cursor))
        if not F:  # nothing relevant yet: next batch
            continue
        if used == len(rounds):
            raise NeedsMoreRounds
        uses, sup = rounds[used]
        used += 1
        for _ in uses:  # usefulness checks never touch F, C or the cursor
            events.append(("isUse", F, tuple(C), cursor))
        answered = True
        if sup == "True":
            events.append(("isSup", F, tuple(C), cursor))
            return events, "verified", examined, C
        if sup == "False":
            C = []
        F = False
        events.append(("isSup", F, tuple(C), cursor))
    status = "unverified_budget" if C and answered else "failed"
    return events, status, examined, C
