from harness import MetricsReport
from osc_publish import OscPublisher


class FakeClient:
    def __init__(self):
        self.messages = []

    def send_message(self, address, value):
        self.messages.append((address, value))


def row(decoder, sf, prr, srr, throughput_kbps):
    return {'decoder': decoder, 'sf': sf, 'prr': prr, 'srr': srr, 'throughput_kbps': throughput_kbps}


def test_publish_row():
    client = FakeClient()
    OscPublisher(client=client).publish_row(row('psr', 10, 0.9, 0.5, 3.2))
    assert client.messages == [
        ('/psr/psr/sf10/prr', 0.9),
        ('/psr/psr/sf10/srr', 0.5),
        ('/psr/psr/sf10/throughput', 3.2),
    ]


def test_publish_report():
    client = FakeClient()
    report = MetricsReport(rows=[row('standard', 7, 1, 0, 5), row('psr', 7, 1, 0.25, 5)])
    OscPublisher(client=client).publish(report)
    assert len(client.messages) == 6
    assert all(isinstance(value, float) for _, value in client.messages)
    assert client.messages[3] == ('/psr/psr/sf7/prr', 1.0)
