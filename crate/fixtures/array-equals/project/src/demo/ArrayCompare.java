package demo;

public class ArrayCompare {
    public static boolean sameContents(int[] a, int[] b) {
        return a.equals(b);
    }

    public static boolean sameNames(String[] a, String[] b) {
        return a.equals(b);
    }
}
