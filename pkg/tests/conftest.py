import numpy as np
import pytest

from tcforensics.trace import MemoryAccessRecord, PacketRecord, Trace, TraceKind


def memory_trace(times, pid=42, page=0x1000, dom=1, acc="r", page_size=4096):
    recs = [MemoryAccessRecord(int(t), dom, pid, page, acc) for t in times]
    return Trace.from_records(TraceKind.MEMORY, recs, page_size=page_size)


def packet_trace(times, src=("192.168.87.2", 48628), dst=("192.168.87.4", 6789), proto="udp"):
    recs = [PacketRecord(int(t), src[0], src[1], dst[0], dst[1], proto, 64) for t in times]
    return Trace.from_records(TraceKind.PACKET, recs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
