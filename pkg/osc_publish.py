'''
Stream finished experiment cells to an OSC server.

Every report row becomes three messages:
    /psr/<decoder>/sf<sf>/prr
    /psr/<decoder>/sf<sf>/srr
    /psr/<decoder>/sf<sf>/throughput

Example:
    $ python3 osc_publish.py report.json --ip 127.0.0.1 --port 54321
'''

import argparse
import logging

from pythonosc import udp_client

from errors import IoError


logger = logging.getLogger(__name__)

DEFAULT_IP = '127.0.0.1'
DEFAULT_PORT = 54321


class OscPublisher:
    def __init__(self, ip=DEFAULT_IP, port=DEFAULT_PORT, client=None):
        self.client = client if client is not None else udp_client.SimpleUDPClient(ip, port)

    def publish_row(self, row):
        base = f"/psr/{row['decoder']}/sf{row['sf']}"
        self.client.send_message(f'{base}/prr', float(row['prr']))
        self.client.send_message(f'{base}/srr', float(row['srr']))
        self.client.send_message(f'{base}/throughput', float(row['throughput_kbps']))

    def publish(self, report):
        for row in report.rows:
            self.publish_row(row)
        logger.info('published %d rows over OSC', len(report.rows))


if __name__ == '__main__':
    from harness import MetricsReport

    parser = argparse.ArgumentParser()
    parser.add_argument('report', help='JSON report written by `harness.py run --format json`')
    parser.add_argument('--ip', default=DEFAULT_IP,
                        help='The IP of the OSC server')
    parser.add_argument('--port', type=int, default=DEFAULT_PORT,
                        help='The port the OSC server is listening on')
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO)
    try:
        with open(args.report) as f:
            report = MetricsReport.from_json(f.read())
    except OSError as e:
        raise SystemExit(f'error: {IoError(args.report, e.strerror or str(e))}')
    OscPublisher(args.ip, args.port).publish(report)
