import argparse
import sys

from django.core.management.base import BaseCommand, CommandError

from cli.runner import run


class Command(BaseCommand):
    help = (
        'Deep episodic memory pipeline: gen-data, train, encode, mem-insert, query, sim-matrix, '
        'eval-retrieval, eval-psnr, predict. Run "epimem <subcommand> --help" for its flags.'
    )
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('argv', nargs=argparse.REMAINDER, help='subcommand and its flags')

    def run_from_argv(self, argv):
        # argv: [prog, 'epimem', subcommand, ...]; exit codes come from run()
        sys.exit(run(argv[2:], stdout=self.stdout, stderr=self.stderr))

    def handle(self, *args, **options):
        code = run(options['argv'], stdout=self.stdout, stderr=self.stderr)
        if code:
            raise CommandError(f"epimem exited with status {code}", returncode=code)
