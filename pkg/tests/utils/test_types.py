import unittest

from app.utils.types import CoarseMethod, ExitCode, FrameType, JitterMode, Party


class TestTypes(unittest.TestCase):
    def test_party_byte_values(self):
        self.assertEqual(Party(0), Party.ALICE)
        self.assertEqual(Party(1), Party.BOB)

    def test_peer(self):
        self.assertIs(Party.ALICE.peer, Party.BOB)
        self.assertIs(Party.BOB.peer, Party.ALICE)

    def test_frame_type_codes(self):
        self.assertEqual([int(t) for t in FrameType], [1, 2, 3, 4])
        with self.assertRaises(ValueError):
            FrameType(9)

    def test_string_enums(self):
        self.assertIs(JitterMode("pair"), JitterMode.PAIR)
        self.assertIs(CoarseMethod("fft"), CoarseMethod.FFT)

    def test_exit_codes(self):
        self.assertEqual(
            [ExitCode.OK, ExitCode.USAGE, ExitCode.DATA, ExitCode.ANALYSIS], [0, 1, 2, 3]
        )


if __name__ == "__main__":
    unittest.main()
